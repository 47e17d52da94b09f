#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dsup/rng.hpp"
#include "dsup/tensor.hpp"

namespace dsup {

// Trainable (or persistent) tensor. value/gradient/velocity always share one
// shape; velocity is the SGD momentum buffer.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor gradient;
    Tensor velocity;

    Parameter() = default;
    Parameter(std::string n, Tensor v)
        : name(std::move(n)), value(std::move(v)), gradient(value.shape()), velocity(value.shape()) {}

    void zero_grad() { gradient.fill(0.0f); }
};

// Batch normalization state: learnable scale/shift plus running statistics.
// `count` tracks how many batches have updated the running stats; evaluating
// in eval mode before any update is an error.
struct BatchNorm {
    Parameter gamma;
    Parameter beta;
    Parameter running_mean;
    Parameter running_var;
    Parameter count; // scalar number of tracked batches
    float eps = 1e-5f;
    float momentum = 0.9f;

    BatchNorm() = default;
    BatchNorm(const std::string& prefix, int channels, float eps_ = 1e-5f, float momentum_ = 0.9f);
};

struct Value {
    int node = -1;
    bool valid() const { return node >= 0; }
};

// Recorded computation graph for one forward pass. Ops append nodes in
// execution order, which is already a topological order; backward() walks it
// in reverse exactly once and accumulates into Parameter::gradient.
class Tape {
public:
    enum class Mode { train, eval };

    explicit Tape(Mode mode = Mode::train) : mode_(mode) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Mode mode() const { return mode_; }

    Value input(Tensor t, std::string label = "input");

    // Cross-correlation (no kernel flip); weight shape (outC, inC, k, k).
    Value conv2d(Value in, Parameter& weight, Parameter& bias, int stride = 1, int pad = 1);
    Value batch_norm(Value in, BatchNorm& bn);
    Value relu(Value in);
    Value global_average_pool(Value in);
    Value fully_connected(Value in, Parameter& weight, Parameter& bias);
    Value dropout(Value in, float rate, RngStream& rng);
    // Sum of squared differences over all components, divided by batch size.
    Value l2_loss(Value pred, Tensor target);
    Value add(Value a, Value b);
    Value scale(Value in, float k);

    const Tensor& tensor(Value v) const;
    float scalar_value(Value v) const;

    void backward(Value loss);

    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        std::string label;
        Tensor out;
        Tensor grad; // allocated lazily during backward
        std::function<void(Tape&, Node&)> backward;
    };

    int push(std::string label, Tensor out, std::function<void(Tape&, Node&)> bw);
    Tensor& grad_of(int node);
    const Tensor& out_of(int node) const { return nodes_[static_cast<std::size_t>(node)].out; }
    void check_value(Value v, const char* who) const;

    Mode mode_;
    std::vector<Node> nodes_;
    bool ran_backward_ = false;
};

// v <- momentum*v + grad + weight_decay*value; value <- value - lr*v; grad <- 0.
void sgd_step(const std::vector<Parameter*>& params, float lr, float momentum, float weight_decay);

// Uniform samples in +-sqrt(6/(fan_in+fan_out)).
Tensor glorot_init(const std::vector<int>& shape, RngStream& rng);

} // namespace dsup
