#include "dsup/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dsup {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void require(bool ok, const std::string& msg) {
    if (!ok) fail(msg);
}

// Convolution runs as im2col followed by a register-blocked matrix product.
// The summation per output element is the plain direct sum over
// (inC, kh, kw) in that order; the blocking only regroups independent output
// elements.

// col has Kd = Cin*K*K rows of length N = OH*OW, one image at a time.
void im2col(const float* __restrict x, int Cin, int H, int W, int K, int stride, int pad, int OH, int OW,
            float* __restrict col) {
    const int N = OH * OW;
    for (int ic = 0; ic < Cin; ++ic)
        for (int kh = 0; kh < K; ++kh)
            for (int kw = 0; kw < K; ++kw) {
                float* __restrict dst = col + (static_cast<std::int64_t>(ic * K + kh) * K + kw) * N;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    float* __restrict drow = dst + static_cast<std::int64_t>(oh) * OW;
                    if (ih < 0 || ih >= H) {
                        std::fill(drow, drow + OW, 0.0f);
                        continue;
                    }
                    const float* __restrict xrow = x + (static_cast<std::int64_t>(ic) * H + ih) * W;
                    if (stride == 1) {
                        const int ow_lo = std::max(0, pad - kw);
                        const int ow_hi = std::min(OW, W - kw + pad);
                        for (int ow = 0; ow < ow_lo; ++ow) drow[ow] = 0.0f;
                        for (int ow = ow_lo; ow < ow_hi; ++ow) drow[ow] = xrow[ow + kw - pad];
                        for (int ow = ow_hi; ow < OW; ++ow) drow[ow] = 0.0f;
                    } else {
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride + kw - pad;
                            drow[ow] = (iw < 0 || iw >= W) ? 0.0f : xrow[iw];
                        }
                    }
                }
            }
}

// Scatter-add of col rows back into the image gradient (inverse of im2col).
void col2im_add(const float* __restrict col, int Cin, int H, int W, int K, int stride, int pad, int OH, int OW,
                float* __restrict gx) {
    const int N = OH * OW;
    for (int ic = 0; ic < Cin; ++ic)
        for (int kh = 0; kh < K; ++kh)
            for (int kw = 0; kw < K; ++kw) {
                const float* __restrict src = col + (static_cast<std::int64_t>(ic * K + kh) * K + kw) * N;
                for (int oh = 0; oh < OH; ++oh) {
                    const int ih = oh * stride + kh - pad;
                    if (ih < 0 || ih >= H) continue;
                    const float* __restrict srow = src + static_cast<std::int64_t>(oh) * OW;
                    float* __restrict grow = gx + (static_cast<std::int64_t>(ic) * H + ih) * W;
                    if (stride == 1) {
                        const int ow_lo = std::max(0, pad - kw);
                        const int ow_hi = std::min(OW, W - kw + pad);
                        for (int ow = ow_lo; ow < ow_hi; ++ow) grow[ow + kw - pad] += srow[ow];
                    } else {
                        for (int ow = 0; ow < OW; ++ow) {
                            const int iw = ow * stride + kw - pad;
                            if (iw >= 0 && iw < W) grow[iw] += srow[ow];
                        }
                    }
                }
            }
}

// C[M x N] = A[M x Kd] * B[Kd x N] (+ optional per-row bias), 4x64 blocks.
void gemm_rows(const float* __restrict A, const float* __restrict B, const float* bias, float* __restrict C, int M,
               int Kd, int N) {
    constexpr int JB = 64, IB = 4;
    for (int i0 = 0; i0 < M; i0 += IB) {
        const int ib = std::min(IB, M - i0);
        for (int j0 = 0; j0 < N; j0 += JB) {
            const int jb = std::min(JB, N - j0);
            float acc[IB][JB];
            for (int u = 0; u < ib; ++u)
                for (int j = 0; j < jb; ++j) acc[u][j] = bias ? bias[i0 + u] : 0.0f;
            if (ib == IB && jb == JB) {
                for (int k = 0; k < Kd; ++k) {
                    const float* __restrict brow = B + static_cast<std::int64_t>(k) * N + j0;
                    for (int u = 0; u < IB; ++u) {
                        const float a = A[static_cast<std::int64_t>(i0 + u) * Kd + k];
                        for (int j = 0; j < JB; ++j) acc[u][j] += a * brow[j];
                    }
                }
            } else {
                for (int k = 0; k < Kd; ++k) {
                    const float* __restrict brow = B + static_cast<std::int64_t>(k) * N + j0;
                    for (int u = 0; u < ib; ++u) {
                        const float a = A[static_cast<std::int64_t>(i0 + u) * Kd + k];
                        for (int j = 0; j < jb; ++j) acc[u][j] += a * brow[j];
                    }
                }
            }
            for (int u = 0; u < ib; ++u)
                for (int j = 0; j < jb; ++j) C[static_cast<std::int64_t>(i0 + u) * N + j0 + j] = acc[u][j];
        }
    }
}

// C[Kd x N] = A^T * B with A[M x Kd], B[M x N].
void gemm_tA(const float* __restrict A, const float* __restrict B, float* __restrict C, int M, int Kd, int N) {
    constexpr int JB = 64, IB = 4;
    for (int i0 = 0; i0 < Kd; i0 += IB) {
        const int ib = std::min(IB, Kd - i0);
        for (int j0 = 0; j0 < N; j0 += JB) {
            const int jb = std::min(JB, N - j0);
            float acc[IB][JB];
            for (int u = 0; u < ib; ++u)
                for (int j = 0; j < jb; ++j) acc[u][j] = 0.0f;
            for (int m = 0; m < M; ++m) {
                const float* __restrict brow = B + static_cast<std::int64_t>(m) * N + j0;
                for (int u = 0; u < ib; ++u) {
                    const float a = A[static_cast<std::int64_t>(m) * Kd + i0 + u];
                    for (int j = 0; j < jb; ++j) acc[u][j] += a * brow[j];
                }
            }
            for (int u = 0; u < ib; ++u)
                for (int j = 0; j < jb; ++j) C[static_cast<std::int64_t>(i0 + u) * N + j0 + j] = acc[u][j];
        }
    }
}

// Row-by-row dot products g[M x N] . col[Kd x N]^T accumulated into the f64
// scratch (the cross-batch weight-gradient reduction).
void accum_weight_grad(const float* __restrict g, const float* __restrict col, double* __restrict scratch, int M,
                       int Kd, int N) {
    for (int m = 0; m < M; ++m) {
        const float* __restrict grow = g + static_cast<std::int64_t>(m) * N;
        for (int k = 0; k < Kd; ++k) {
            const float* __restrict crow = col + static_cast<std::int64_t>(k) * N;
            float part[16] = {};
            int j = 0;
            for (; j + 16 <= N; j += 16)
                for (int u = 0; u < 16; ++u) part[u] += grow[j + u] * crow[j + u];
            double acc = 0.0;
            for (int u = 0; u < 16; ++u) acc += part[u];
            for (; j < N; ++j) acc += static_cast<double>(grow[j]) * crow[j];
            scratch[static_cast<std::int64_t>(m) * Kd + k] += acc;
        }
    }
}

} // namespace

BatchNorm::BatchNorm(const std::string& prefix, int channels, float eps_, float momentum_)
    : gamma(prefix + ".gamma", Tensor({channels}, 1.0f)),
      beta(prefix + ".beta", Tensor({channels}, 0.0f)),
      running_mean(prefix + ".running_mean", Tensor({channels}, 0.0f)),
      running_var(prefix + ".running_var", Tensor({channels}, 1.0f)),
      count(prefix + ".count", Tensor({1}, 0.0f)),
      eps(eps_),
      momentum(momentum_) {
    require(eps_ > 0.0f, "batch_norm eps must be positive");
}

int Tape::push(std::string label, Tensor out, std::function<void(Tape&, Node&)> bw) {
    if (!out.all_finite()) fail("non-finite value produced by node '" + label + "'");
    nodes_.push_back(Node{std::move(label), std::move(out), Tensor{}, std::move(bw)});
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Tape::grad_of(int node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad = Tensor(n.out.shape());
    return n.grad;
}

void Tape::check_value(Value v, const char* who) const {
    if (!v.valid() || v.node >= static_cast<int>(nodes_.size()))
        fail(std::string(who) + ": invalid value handle");
}

const Tensor& Tape::tensor(Value v) const {
    check_value(v, "tensor");
    return nodes_[static_cast<std::size_t>(v.node)].out;
}

float Tape::scalar_value(Value v) const {
    const Tensor& t = tensor(v);
    require(t.size() == 1, "scalar_value: tensor has " + std::to_string(t.size()) + " elements");
    return t[0];
}

Value Tape::input(Tensor t, std::string label) {
    return Value{push(std::move(label), std::move(t), nullptr)};
}

Value Tape::conv2d(Value in, Parameter& weight, Parameter& bias, int stride, int pad) {
    check_value(in, "conv2d");
    const Tensor& x = out_of(in.node);
    const Tensor& w = weight.value;
    require(x.rank() == 4, "conv2d: input must be 4-D, got " + x.shape_str());
    require(w.rank() == 4, "conv2d: weight must be 4-D, got " + w.shape_str());
    require(stride >= 1, "conv2d: stride must be >= 1");
    require(pad >= 0, "conv2d: pad must be >= 0");
    const int B = x.dim(0), Cin = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int Cout = w.dim(0), K = w.dim(2);
    require(w.dim(1) == Cin,
            "conv2d: weight expects " + std::to_string(w.dim(1)) + " input channels, input has " + std::to_string(Cin));
    require(w.dim(3) == K, "conv2d: kernel must be square, got " + w.shape_str());
    require(bias.value.rank() == 1 && bias.value.dim(0) == Cout, "conv2d: bias shape must be (outC)");
    const int OH = (H + 2 * pad - K) / stride + 1;
    const int OW = (W + 2 * pad - K) / stride + 1;
    require(H + 2 * pad - K >= 0 && W + 2 * pad - K >= 0 && OH > 0 && OW > 0,
            "conv2d: non-positive output size for input " + x.shape_str() + " weight " + w.shape_str());

    const int N = OH * OW;
    const int Kd = Cin * K * K;
    Tensor out = Tensor::uninitialized({B, Cout, OH, OW});
    {
        static thread_local std::vector<float> colbuf;
        colbuf.resize(static_cast<std::size_t>(Kd) * N);
        const float* xd = x.data();
        const float* wd = w.data();
        float* od = out.data();
        const std::int64_t x_b = static_cast<std::int64_t>(Cin) * H * W;
        const std::int64_t o_b = static_cast<std::int64_t>(Cout) * N;
        for (int b = 0; b < B; ++b) {
            im2col(xd + b * x_b, Cin, H, W, K, stride, pad, OH, OW, colbuf.data());
            gemm_rows(wd, colbuf.data(), bias.value.data(), od + b * o_b, Cout, Kd, N);
        }
    }

    const int in_node = in.node;
    Parameter* wp = &weight;
    Parameter* bp = &bias;
    auto bw = [in_node, wp, bp, stride, pad, B, Cin, H, W, Cout, K, OH, OW, N, Kd](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        const float* xd = tape.out_of(in_node).data();
        Tensor& gin = tape.grad_of(in_node);
        float* gid = gin.data();
        const std::int64_t x_b = static_cast<std::int64_t>(Cin) * H * W;
        const std::int64_t o_b = static_cast<std::int64_t>(Cout) * N;

        // bias gradient: row sums in f32, totals in f64
        for (int oc = 0; oc < Cout; ++oc) {
            double acc = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* grow = gd + b * o_b + static_cast<std::int64_t>(oc) * N;
                float s0 = 0.0f, s1 = 0.0f, s2 = 0.0f, s3 = 0.0f;
                int j = 0;
                for (; j + 4 <= N; j += 4) {
                    s0 += grow[j];
                    s1 += grow[j + 1];
                    s2 += grow[j + 2];
                    s3 += grow[j + 3];
                }
                double s = (static_cast<double>(s0) + s1) + (static_cast<double>(s2) + s3);
                for (; j < N; ++j) s += grow[j];
                acc += s;
            }
            bp->gradient[oc] += static_cast<float>(acc);
        }

        // weight gradient via per-image row dots into an f64 scratch; the col
        // matrix is rebuilt per image (cheaper than keeping it alive)
        static thread_local std::vector<float> colbuf;
        static thread_local std::vector<float> dcol;
        static thread_local std::vector<double> wscratch;
        colbuf.resize(static_cast<std::size_t>(Kd) * N);
        dcol.resize(static_cast<std::size_t>(Kd) * N);
        wscratch.assign(static_cast<std::size_t>(Cout) * Kd, 0.0);
        for (int b = 0; b < B; ++b) {
            im2col(xd + b * x_b, Cin, H, W, K, stride, pad, OH, OW, colbuf.data());
            accum_weight_grad(gd + b * o_b, colbuf.data(), wscratch.data(), Cout, Kd, N);
            gemm_tA(wp->value.data(), gd + b * o_b, dcol.data(), Cout, Kd, N);
            col2im_add(dcol.data(), Cin, H, W, K, stride, pad, OH, OW, gid + b * x_b);
        }
        {
            float* wg = wp->gradient.data();
            const std::int64_t n = wp->gradient.size();
            for (std::int64_t i = 0; i < n; ++i) wg[i] += static_cast<float>(wscratch[static_cast<std::size_t>(i)]);
        }
    };
    return Value{push("conv2d", std::move(out), std::move(bw))};
}

Value Tape::batch_norm(Value in, BatchNorm& bn) {
    check_value(in, "batch_norm");
    const Tensor& x = out_of(in.node);
    require(x.rank() == 4, "batch_norm: input must be 4-D, got " + x.shape_str());
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    require(bn.gamma.value.size() == C && bn.beta.value.size() == C,
            "batch_norm: gamma/beta length must equal channel count " + std::to_string(C));
    require(B >= 1, "batch_norm: batch of size 0");
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    const std::int64_t m = static_cast<std::int64_t>(B) * plane;

    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();

    if (mode_ == Mode::train) {
        std::vector<float> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
        Tensor xhat(x.shape());
        float* hd = xhat.data();
        for (int c = 0; c < C; ++c) {
            double s = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = xd + (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double v = 0.0;
            for (int b = 0; b < B; ++b) {
                const float* p = xd + (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const double d = p[i] - mu;
                    v += d * d;
                }
            }
            const double var = v / static_cast<double>(m);
            mean[static_cast<std::size_t>(c)] = static_cast<float>(mu);
            const float istd = static_cast<float>(1.0 / std::sqrt(var + bn.eps));
            inv_std[static_cast<std::size_t>(c)] = istd;
            const float g = bn.gamma.value[c], be = bn.beta.value[c];
            const float muf = static_cast<float>(mu);
            for (int b = 0; b < B; ++b) {
                const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) {
                    const float xh = (xd[base + i] - muf) * istd;
                    hd[base + i] = xh;
                    od[base + i] = g * xh + be;
                }
            }
            bn.running_mean.value[c] = bn.momentum * bn.running_mean.value[c] + (1.0f - bn.momentum) * muf;
            bn.running_var.value[c] =
                bn.momentum * bn.running_var.value[c] + (1.0f - bn.momentum) * static_cast<float>(var);
        }
        bn.count.value[0] += 1.0f;

        const int in_node = in.node;
        BatchNorm* bnp = &bn;
        auto bw = [in_node, bnp, B, C, plane, m, xhat = std::move(xhat), inv_std](Tape& tape, Node& self) {
            const float* gd = self.grad.data();
            const float* hd2 = xhat.data();
            Tensor& gin = tape.grad_of(in_node);
            float* gid = gin.data();
            for (int c = 0; c < C; ++c) {
                double s1 = 0.0, s2 = 0.0;
                for (int b = 0; b < B; ++b) {
                    const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i) {
                        s1 += gd[base + i];
                        s2 += static_cast<double>(gd[base + i]) * hd2[base + i];
                    }
                }
                bnp->beta.gradient[c] += static_cast<float>(s1);
                bnp->gamma.gradient[c] += static_cast<float>(s2);
                const float k = bnp->gamma.value[c] * inv_std[static_cast<std::size_t>(c)];
                const float m1 = static_cast<float>(s1 / static_cast<double>(m));
                const float m2 = static_cast<float>(s2 / static_cast<double>(m));
                for (int b = 0; b < B; ++b) {
                    const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
                    for (std::int64_t i = 0; i < plane; ++i)
                        gid[base + i] += k * (gd[base + i] - m1 - hd2[base + i] * m2);
                }
            }
        };
        return Value{push("batch_norm", std::move(out), std::move(bw))};
    }

    // eval mode: use running statistics
    require(bn.count.value[0] > 0.0f,
            "batch_norm '" + bn.gamma.name + "': eval mode before any train step (running stats uninitialized)");
    std::vector<float> scale(static_cast<std::size_t>(C));
    for (int c = 0; c < C; ++c) {
        const float istd = 1.0f / std::sqrt(bn.running_var.value[c] + bn.eps);
        scale[static_cast<std::size_t>(c)] = bn.gamma.value[c] * istd;
        const float shift = bn.beta.value[c] - bn.running_mean.value[c] * scale[static_cast<std::size_t>(c)];
        for (int b = 0; b < B; ++b) {
            const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
            for (std::int64_t i = 0; i < plane; ++i) od[base + i] = scale[static_cast<std::size_t>(c)] * xd[base + i] + shift;
        }
    }
    const int in_node = in.node;
    auto bw = [in_node, B, C, plane, scale](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        Tensor& gin = tape.grad_of(in_node);
        float* gid = gin.data();
        for (int c = 0; c < C; ++c) {
            const float k = scale[static_cast<std::size_t>(c)];
            for (int b = 0; b < B; ++b) {
                const std::int64_t base = (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) gid[base + i] += k * gd[base + i];
            }
        }
    };
    return Value{push("batch_norm.eval", std::move(out), std::move(bw))};
}

Value Tape::relu(Value in) {
    check_value(in, "relu");
    const Tensor& x = out_of(in.node);
    Tensor out(x.shape());
    const float* xd = x.data();
    float* od = out.data();
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) od[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
    const int in_node = in.node;
    auto bw = [in_node, n](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        const float* xd2 = tape.out_of(in_node).data();
        float* gid = tape.grad_of(in_node).data();
        // subgradient at exactly 0 is 0
        for (std::int64_t i = 0; i < n; ++i)
            if (xd2[i] > 0.0f) gid[i] += gd[i];
    };
    return Value{push("relu", std::move(out), std::move(bw))};
}

Value Tape::global_average_pool(Value in) {
    check_value(in, "global_average_pool");
    const Tensor& x = out_of(in.node);
    require(x.rank() == 4, "global_average_pool: input must be 4-D, got " + x.shape_str());
    const int B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const std::int64_t plane = static_cast<std::int64_t>(H) * W;
    Tensor out({B, C, 1, 1});
    const float* xd = x.data();
    for (int b = 0; b < B; ++b)
        for (int c = 0; c < C; ++c) {
            const float* p = xd + (static_cast<std::int64_t>(b) * C + c) * plane;
            double s = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) s += p[i];
            out.at4(b, c, 0, 0) = static_cast<float>(s / static_cast<double>(plane));
        }
    const int in_node = in.node;
    auto bw = [in_node, B, C, plane](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        float* gid = tape.grad_of(in_node).data();
        const float inv = 1.0f / static_cast<float>(plane);
        for (int b = 0; b < B; ++b)
            for (int c = 0; c < C; ++c) {
                const float g = gd[static_cast<std::int64_t>(b) * C + c] * inv;
                float* p = gid + (static_cast<std::int64_t>(b) * C + c) * plane;
                for (std::int64_t i = 0; i < plane; ++i) p[i] += g;
            }
    };
    return Value{push("global_average_pool", std::move(out), std::move(bw))};
}

Value Tape::fully_connected(Value in, Parameter& weight, Parameter& bias) {
    check_value(in, "fully_connected");
    const Tensor& x = out_of(in.node);
    require(x.rank() >= 2, "fully_connected: input must have a batch dimension");
    const int B = x.dim(0);
    const std::int64_t F = x.size() / B;
    require(weight.value.rank() == 2, "fully_connected: weight must be 2-D, got " + weight.value.shape_str());
    const int O = weight.value.dim(0);
    require(weight.value.dim(1) == F, "fully_connected: weight expects " + std::to_string(weight.value.dim(1)) +
                                          " features, input has " + std::to_string(F));
    require(bias.value.rank() == 1 && bias.value.dim(0) == O, "fully_connected: bias shape must be (out)");

    Tensor out({B, O});
    const float* xd = x.data();
    const float* wd = weight.value.data();
    for (int b = 0; b < B; ++b) {
        const float* xrow = xd + b * F;
        for (int o = 0; o < O; ++o) {
            const float* wrow = wd + static_cast<std::int64_t>(o) * F;
            double acc = bias.value[o];
            for (std::int64_t f = 0; f < F; ++f) acc += static_cast<double>(xrow[f]) * wrow[f];
            out.at2(b, o) = static_cast<float>(acc);
        }
    }
    const int in_node = in.node;
    Parameter* wp = &weight;
    Parameter* bp = &bias;
    auto bw = [in_node, wp, bp, B, F, O](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        const float* xd2 = tape.out_of(in_node).data();
        const float* wd2 = wp->value.data();
        float* gid = tape.grad_of(in_node).data();
        for (int o = 0; o < O; ++o) {
            double bacc = 0.0;
            for (int b = 0; b < B; ++b) bacc += gd[static_cast<std::int64_t>(b) * O + o];
            bp->gradient[o] += static_cast<float>(bacc);
        }
        float* wg = wp->gradient.data();
        for (int o = 0; o < O; ++o)
            for (std::int64_t f = 0; f < F; ++f) {
                double acc = 0.0;
                for (int b = 0; b < B; ++b)
                    acc += static_cast<double>(gd[static_cast<std::int64_t>(b) * O + o]) * xd2[b * F + f];
                wg[static_cast<std::int64_t>(o) * F + f] += static_cast<float>(acc);
            }
        for (int b = 0; b < B; ++b)
            for (std::int64_t f = 0; f < F; ++f) {
                double acc = 0.0;
                for (int o = 0; o < O; ++o)
                    acc += static_cast<double>(gd[static_cast<std::int64_t>(b) * O + o]) *
                           wd2[static_cast<std::int64_t>(o) * F + f];
                gid[b * F + f] += static_cast<float>(acc);
            }
    };
    return Value{push("fully_connected", std::move(out), std::move(bw))};
}

Value Tape::dropout(Value in, float rate, RngStream& rng) {
    check_value(in, "dropout");
    require(rate >= 0.0f && rate < 1.0f, "dropout: rate must lie in [0,1), got " + std::to_string(rate));
    const Tensor& x = out_of(in.node);
    const std::int64_t n = x.size();
    if (mode_ == Mode::eval || rate == 0.0f) {
        Tensor out = x;
        const int in_node = in.node;
        auto bw = [in_node, n](Tape& tape, Node& self) {
            const float* gd = self.grad.data();
            float* gid = tape.grad_of(in_node).data();
            for (std::int64_t i = 0; i < n; ++i) gid[i] += gd[i];
        };
        return Value{push("dropout.identity", std::move(out), std::move(bw))};
    }
    const float keep_scale = 1.0f / (1.0f - rate);
    Tensor mask(x.shape());
    Tensor out(x.shape());
    const float* xd = x.data();
    float* md = mask.data();
    float* od = out.data();
    for (std::int64_t i = 0; i < n; ++i) {
        const bool drop = rng.next_double() < static_cast<double>(rate);
        md[i] = drop ? 0.0f : keep_scale;
        od[i] = xd[i] * md[i];
    }
    const int in_node = in.node;
    auto bw = [in_node, n, mask = std::move(mask)](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        const float* md2 = mask.data();
        float* gid = tape.grad_of(in_node).data();
        for (std::int64_t i = 0; i < n; ++i) gid[i] += gd[i] * md2[i];
    };
    return Value{push("dropout", std::move(out), std::move(bw))};
}

Value Tape::l2_loss(Value pred, Tensor target) {
    check_value(pred, "l2_loss");
    const Tensor& p = out_of(pred.node);
    require(p.same_shape(target),
            "l2_loss: prediction shape " + p.shape_str() + " != target shape " + target.shape_str());
    const int B = p.dim(0);
    const std::int64_t n = p.size();
    const float* pd = p.data();
    const float* td = target.data();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(pd[i]) - td[i];
        acc += d * d;
    }
    Tensor out({1}, {static_cast<float>(acc / B)});
    const int pred_node = pred.node;
    auto bw = [pred_node, n, B, target = std::move(target)](Tape& tape, Node& self) {
        const float g = self.grad[0];
        const float* pd2 = tape.out_of(pred_node).data();
        const float* td2 = target.data();
        float* gid = tape.grad_of(pred_node).data();
        const float k = 2.0f * g / static_cast<float>(B);
        for (std::int64_t i = 0; i < n; ++i) gid[i] += k * (pd2[i] - td2[i]);
    };
    return Value{push("l2_loss", std::move(out), std::move(bw))};
}

Value Tape::add(Value a, Value b) {
    check_value(a, "add");
    check_value(b, "add");
    const Tensor& ta = out_of(a.node);
    const Tensor& tb = out_of(b.node);
    require(ta.same_shape(tb), "add: shape mismatch " + ta.shape_str() + " vs " + tb.shape_str());
    Tensor out(ta.shape());
    const std::int64_t n = ta.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = ta[i] + tb[i];
    const int na = a.node, nb = b.node;
    auto bw = [na, nb, n](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        float* ga = tape.grad_of(na).data();
        float* gb = tape.grad_of(nb).data();
        for (std::int64_t i = 0; i < n; ++i) {
            ga[i] += gd[i];
            gb[i] += gd[i];
        }
    };
    return Value{push("add", std::move(out), std::move(bw))};
}

Value Tape::scale(Value in, float k) {
    check_value(in, "scale");
    const Tensor& x = out_of(in.node);
    Tensor out(x.shape());
    const std::int64_t n = x.size();
    for (std::int64_t i = 0; i < n; ++i) out[i] = k * x[i];
    const int in_node = in.node;
    auto bw = [in_node, n, k](Tape& tape, Node& self) {
        const float* gd = self.grad.data();
        float* gid = tape.grad_of(in_node).data();
        for (std::int64_t i = 0; i < n; ++i) gid[i] += k * gd[i];
    };
    return Value{push("scale", std::move(out), std::move(bw))};
}

void Tape::backward(Value loss) {
    if (nodes_.empty()) fail("backward called before any forward pass");
    check_value(loss, "backward");
    Node& ln = nodes_[static_cast<std::size_t>(loss.node)];
    require(ln.out.size() == 1, "backward: loss must be scalar, got " + ln.out.shape_str());
    grad_of(loss.node)[0] += 1.0f;
    for (int i = loss.node; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (n.grad.empty() || !n.backward) continue;
        n.backward(*this, n);
    }
    ran_backward_ = true;
}

void sgd_step(const std::vector<Parameter*>& params, float lr, float momentum, float weight_decay) {
    for (Parameter* p : params) {
        if (!p->gradient.all_finite()) fail("non-finite gradient in parameter '" + p->name + "'");
        float* v = p->velocity.data();
        float* g = p->gradient.data();
        float* x = p->value.data();
        const std::int64_t n = p->value.size();
        for (std::int64_t i = 0; i < n; ++i) {
            v[i] = momentum * v[i] + g[i] + weight_decay * x[i];
            x[i] -= lr * v[i];
            g[i] = 0.0f;
        }
    }
}

Tensor glorot_init(const std::vector<int>& shape, RngStream& rng) {
    std::int64_t fan_in = 0, fan_out = 0;
    if (shape.size() == 4) {
        const std::int64_t rf = static_cast<std::int64_t>(shape[2]) * shape[3];
        fan_in = shape[1] * rf;
        fan_out = shape[0] * rf;
    } else if (shape.size() == 2) {
        fan_in = shape[1];
        fan_out = shape[0];
    } else if (shape.size() == 1) {
        fan_in = fan_out = shape[0];
    } else {
        fail("glorot_init: cannot derive fans for rank " + std::to_string(shape.size()));
    }
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Tensor t(shape);
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

} // namespace dsup
