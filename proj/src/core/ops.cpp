#include "disro/core/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

namespace disro::nn {

namespace {

Tape* tape_of(const NodeRef& a) { return a->tape; }

void check_same_tape(const NodeRef& a, const NodeRef& b) {
    if (a->tape != b->tape) throw std::logic_error("ops: nodes from different tapes");
}

void check_same_shape(const NodeRef& a, const NodeRef& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a->value.shape()) +
                                    " vs " + shape_str(b->value.shape()));
}

NodeRef make(Tape* t, Tensor v, bool rg) { return t->record(std::move(v), rg, {}); }

}  // namespace

NodeRef add(const NodeRef& a, const NodeRef& b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "add");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() + b->value.array()), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, b] {
            accumulate(a, self->grad.array());
            accumulate(b, self->grad.array());
        };
    }
    return out;
}

NodeRef sub(const NodeRef& a, const NodeRef& b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "sub");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() - b->value.array()), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, b] {
            accumulate(a, self->grad.array());
            accumulate(b, -self->grad.array());
        };
    }
    return out;
}

NodeRef neg(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), -a->value.array()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, -self->grad.array()); };
    }
    return out;
}

NodeRef scale(const NodeRef& a, double c) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() * c), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, c] { accumulate(a, self->grad.array() * c); };
    }
    return out;
}

NodeRef add_scalar(const NodeRef& a, double c) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() + c), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, self->grad.array()); };
    }
    return out;
}

NodeRef hadamard(const NodeRef& a, const NodeRef& b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "hadamard");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() * b->value.array()), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, b] {
            accumulate(a, self->grad.array() * b->value.array());
            accumulate(b, self->grad.array() * a->value.array());
        };
    }
    return out;
}

NodeRef divide(const NodeRef& a, const NodeRef& b) {
    check_same_tape(a, b);
    check_same_shape(a, b, "divide");
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array() / b->value.array()), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, b] {
            accumulate(a, self->grad.array() / b->value.array());
            accumulate(b, -self->grad.array() * a->value.array() / (b->value.array() * b->value.array()));
        };
    }
    return out;
}

NodeRef relu(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().max(0.0)), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] {
            accumulate(a, self->grad.array() * (a->value.array() > 0.0).cast<double>());
        };
    }
    return out;
}

NodeRef exp_op(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().exp()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, self->grad.array() * self->value.array()); };
    }
    return out;
}

NodeRef log_op(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().log()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, self->grad.array() / a->value.array()); };
    }
    return out;
}

NodeRef sqrt_op(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().sqrt()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, self->grad.array() * 0.5 / self->value.array()); };
    }
    return out;
}

NodeRef abs_op(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().abs()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] {
            accumulate(a, self->grad.array() * a->value.array().sign());
        };
    }
    return out;
}

NodeRef clamp_min(const NodeRef& a, double lo) {
    auto out = make(tape_of(a), Tensor(a->value.shape(), a->value.array().max(lo)), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, lo] {
            accumulate(a, self->grad.array() * (a->value.array() > lo).cast<double>());
        };
    }
    return out;
}

NodeRef sigmoid(const NodeRef& a) {
    // Clamp logits so the output is strictly inside (0,1) in double precision.
    const double lim = 36.0;
    Tensor v(a->value.shape());
    for (int64_t i = 0; i < v.numel(); ++i) {
        double x = std::clamp(a->value[i], -lim, lim);
        v[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }
    auto out = make(tape_of(a), std::move(v), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] {
            accumulate(a, self->grad.array() * self->value.array() * (1.0 - self->value.array()));
        };
    }
    return out;
}

NodeRef sum_all(const NodeRef& a) {
    auto out = make(tape_of(a), Tensor::scalar(a->value.array().sum()), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] {
            accumulate(a, Eigen::ArrayXd::Constant(a->value.numel(), self->grad[0]));
        };
    }
    return out;
}

NodeRef mean_all(const NodeRef& a) {
    const double n = static_cast<double>(a->value.numel());
    auto out = make(tape_of(a), Tensor::scalar(a->value.array().sum() / n), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, n] {
            accumulate(a, Eigen::ArrayXd::Constant(a->value.numel(), self->grad[0] / n));
        };
    }
    return out;
}

NodeRef row_sum(const NodeRef& a) {
    const int64_t rows = a->value.dim(0), cols = a->value.dim(1);
    Tensor v({rows, 1});
    for (int64_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (int64_t j = 0; j < cols; ++j) s += a->value.at(i, j);
        v[i] = s;
    }
    auto out = make(tape_of(a), std::move(v), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, rows, cols] {
            if (!a->requires_grad) return;
            a->ensure_grad();
            for (int64_t i = 0; i < rows; ++i)
                for (int64_t j = 0; j < cols; ++j) a->grad.at(i, j) += self->grad[i];
        };
    }
    return out;
}

NodeRef broadcast_rows(const NodeRef& v, int64_t d) {
    const int64_t rows = v->value.dim(0);
    if (v->value.ndim() != 2 || v->value.dim(1) != 1)
        throw std::invalid_argument("broadcast_rows: expected [B,1]");
    Tensor out_v({rows, d});
    for (int64_t i = 0; i < rows; ++i)
        for (int64_t j = 0; j < d; ++j) out_v.at(i, j) = v->value[i];
    auto out = make(tape_of(v), std::move(out_v), v->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, v, rows, d] {
            if (!v->requires_grad) return;
            v->ensure_grad();
            for (int64_t i = 0; i < rows; ++i) {
                double s = 0.0;
                for (int64_t j = 0; j < d; ++j) s += self->grad.at(i, j);
                v->grad[i] += s;
            }
        };
    }
    return out;
}

NodeRef matmul(const NodeRef& a, const NodeRef& b) {
    check_same_tape(a, b);
    const int64_t m = a->value.dim(0), k = a->value.dim(1), n = b->value.dim(1);
    if (b->value.dim(0) != k) throw std::invalid_argument("matmul: inner dims mismatch");
    Tensor v({m, n});
    v.mat2().noalias() = a->value.mat2() * b->value.mat2();
    bool rg = a->requires_grad || b->requires_grad;
    auto out = make(tape_of(a), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, b, m, k, n] {
            auto dy = self->grad.mat(m, n);
            if (a->requires_grad) {
                a->ensure_grad();
                a->grad.mat(m, k).noalias() += dy * b->value.mat2().transpose();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                b->grad.mat(k, n).noalias() += a->value.mat2().transpose() * dy;
            }
        };
    }
    return out;
}

NodeRef linear(const NodeRef& x, const NodeRef& w, const NodeRef& b) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    const int64_t bs = x->value.dim(0), in = x->value.dim(1), outd = w->value.dim(0);
    if (w->value.dim(1) != in) throw std::invalid_argument("linear: weight shape mismatch");
    if (b->value.numel() != outd) throw std::invalid_argument("linear: bias shape mismatch");
    Tensor v({bs, outd});
    v.mat2().noalias() = x->value.mat2() * w->value.mat2().transpose();
    for (int64_t i = 0; i < bs; ++i)
        for (int64_t j = 0; j < outd; ++j) v.at(i, j) += b->value[j];
    bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
    auto out = make(tape_of(x), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, x, w, b, bs, in, outd] {
            auto dy = self->grad.mat(bs, outd);
            if (x->requires_grad) {
                x->ensure_grad();
                x->grad.mat(bs, in).noalias() += dy * w->value.mat2();
            }
            if (w->requires_grad) {
                w->ensure_grad();
                w->grad.mat(outd, in).noalias() += dy.transpose() * x->value.mat2();
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (int64_t i = 0; i < bs; ++i)
                    for (int64_t j = 0; j < outd; ++j) b->grad[j] += self->grad.at(i, j);
            }
        };
    }
    return out;
}

namespace raw {

void im2col(const Tensor& x, int64_t kh, int64_t kw, int64_t stride, int64_t pad, Tensor& col,
            int64_t& ho, int64_t& wo) {
    const int64_t bs = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
    ho = (h + 2 * pad - kh) / stride + 1;
    wo = (w + 2 * pad - kw) / stride + 1;
    const int64_t ckk = ci * kh * kw;
    col = Tensor({bs * ho * wo, ckk});
    double* cd = col.data();
    const double* xd = x.data();
    for (int64_t n = 0; n < bs; ++n) {
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                double* row = cd + ((n * ho + oy) * wo + ox) * ckk;
                for (int64_t c = 0; c < ci; ++c) {
                    const double* xc = xd + (n * ci + c) * h * w;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            const int64_t idx = (c * kh + ky) * kw + kx;
                            row[idx] = (iy >= 0 && iy < h && ix >= 0 && ix < w) ? xc[iy * w + ix] : 0.0;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const Tensor& col, const Shape& x_shape, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, Tensor& dx) {
    const int64_t bs = x_shape[0], ci = x_shape[1], h = x_shape[2], w = x_shape[3];
    const int64_t ho = (h + 2 * pad - kh) / stride + 1;
    const int64_t wo = (w + 2 * pad - kw) / stride + 1;
    const int64_t ckk = ci * kh * kw;
    dx = Tensor(x_shape);
    double* xd = dx.data();
    const double* cd = col.data();
    for (int64_t n = 0; n < bs; ++n) {
        for (int64_t oy = 0; oy < ho; ++oy) {
            for (int64_t ox = 0; ox < wo; ++ox) {
                const double* row = cd + ((n * ho + oy) * wo + ox) * ckk;
                for (int64_t c = 0; c < ci; ++c) {
                    double* xc = xd + (n * ci + c) * h * w;
                    for (int64_t ky = 0; ky < kh; ++ky) {
                        const int64_t iy = oy * stride - pad + ky;
                        if (iy < 0 || iy >= h) continue;
                        for (int64_t kx = 0; kx < kw; ++kx) {
                            const int64_t ix = ox * stride - pad + kx;
                            if (ix < 0 || ix >= w) continue;
                            xc[iy * w + ix] += row[(c * kh + ky) * kw + kx];
                        }
                    }
                }
            }
        }
    }
}

Tensor flip_transpose_weight(const Tensor& w) {
    const int64_t ci = w.dim(0), co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
    Tensor out({co, ci, kh, kw});
    for (int64_t i = 0; i < ci; ++i)
        for (int64_t o = 0; o < co; ++o)
            for (int64_t ky = 0; ky < kh; ++ky)
                for (int64_t kx = 0; kx < kw; ++kx)
                    out.at4(o, i, ky, kx) = w.at4(i, o, kh - 1 - ky, kw - 1 - kx);
    return out;
}

}  // namespace raw

namespace {

struct ConvPlan {
    int64_t bs, ci, h, w, co, kh, kw, stride, pad, ho, wo;
};

Tensor conv_forward(const Tensor& x, const Tensor& wt, const Tensor& bias, int64_t stride,
                    int64_t pad, std::shared_ptr<Tensor>& col_out, ConvPlan& plan) {
    plan.bs = x.dim(0);
    plan.ci = x.dim(1);
    plan.h = x.dim(2);
    plan.w = x.dim(3);
    plan.co = wt.dim(0);
    plan.kh = wt.dim(2);
    plan.kw = wt.dim(3);
    plan.stride = stride;
    plan.pad = pad;
    if (wt.dim(1) != plan.ci)
        throw std::invalid_argument("conv2d: weight channel mismatch " + shape_str(wt.shape()) +
                                    " for input " + shape_str(x.shape()));
    auto col = std::make_shared<Tensor>();
    raw::im2col(x, plan.kh, plan.kw, stride, pad, *col, plan.ho, plan.wo);
    const int64_t ckk = plan.ci * plan.kh * plan.kw;
    const int64_t hw = plan.ho * plan.wo;
    Tensor out({plan.bs, plan.co, plan.ho, plan.wo});
    auto wm = wt.mat(plan.co, ckk);
    for (int64_t n = 0; n < plan.bs; ++n) {
        ConstMatMap colb(col->data() + n * hw * ckk, hw, ckk);
        MatMap outb(out.data() + n * plan.co * hw, plan.co, hw);
        outb.noalias() = wm * colb.transpose();
        for (int64_t o = 0; o < plan.co; ++o) outb.row(o).array() += bias[o];
    }
    col_out = col;
    return out;
}

}  // namespace

NodeRef conv2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int64_t stride, int64_t pad) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
    std::shared_ptr<Tensor> col;
    ConvPlan plan;
    Tensor v = conv_forward(x->value, w->value, b->value, stride, pad, col, plan);
    auto out = make(tape_of(x), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        if (!tape_of(x)->grad_enabled()) col.reset();
        out->backward_fn = [self, x, w, b, col, plan] {
            const int64_t ckk = plan.ci * plan.kh * plan.kw;
            const int64_t hw = plan.ho * plan.wo;
            Tensor dcol;
            const bool need_dx = x->requires_grad;
            if (need_dx) dcol = Tensor({plan.bs * hw, ckk});
            if (w->requires_grad) w->ensure_grad();
            if (b->requires_grad) b->ensure_grad();
            for (int64_t n = 0; n < plan.bs; ++n) {
                ConstMatMap dout(self->grad.data() + n * plan.co * hw, plan.co, hw);
                ConstMatMap colb(col->data() + n * hw * ckk, hw, ckk);
                if (w->requires_grad) w->grad.mat(plan.co, ckk).noalias() += dout * colb;
                if (b->requires_grad)
                    for (int64_t o = 0; o < plan.co; ++o) b->grad[o] += dout.row(o).sum();
                if (need_dx) {
                    MatMap dcolb(dcol.data() + n * hw * ckk, hw, ckk);
                    dcolb.noalias() = dout.transpose() * w->value.mat(plan.co, ckk);
                }
            }
            if (need_dx) {
                Tensor dx;
                raw::col2im(dcol, x->value.shape(), plan.kh, plan.kw, plan.stride, plan.pad, dx);
                accumulate(x, dx.array());
            }
        };
    }
    return out;
}

NodeRef conv_transpose2d(const NodeRef& x, const NodeRef& w, const NodeRef& b, int64_t pad) {
    check_same_tape(x, w);
    check_same_tape(x, b);
    const int64_t kh = w->value.dim(2), kw = w->value.dim(3);
    const int64_t eq_pad_h = kh - 1 - pad;
    if (eq_pad_h < 0 || kw - 1 - pad < 0) throw std::invalid_argument("conv_transpose2d: pad too large");
    bool rg = x->requires_grad || w->requires_grad || b->requires_grad;
    Tensor w_eq = raw::flip_transpose_weight(w->value);
    std::shared_ptr<Tensor> col;
    ConvPlan plan;
    Tensor v = conv_forward(x->value, w_eq, b->value, 1, eq_pad_h, col, plan);
    auto out = make(tape_of(x), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        if (!tape_of(x)->grad_enabled()) col.reset();
        auto w_eq_saved = std::make_shared<Tensor>(std::move(w_eq));
        out->backward_fn = [self, x, w, b, col, plan, w_eq_saved] {
            const int64_t ckk = plan.ci * plan.kh * plan.kw;
            const int64_t hw = plan.ho * plan.wo;
            Tensor dcol;
            const bool need_dx = x->requires_grad;
            if (need_dx) dcol = Tensor({plan.bs * hw, ckk});
            Tensor dw_eq;
            if (w->requires_grad) dw_eq = Tensor({plan.co, plan.ci, plan.kh, plan.kw});
            if (b->requires_grad) b->ensure_grad();
            for (int64_t n = 0; n < plan.bs; ++n) {
                ConstMatMap dout(self->grad.data() + n * plan.co * hw, plan.co, hw);
                ConstMatMap colb(col->data() + n * hw * ckk, hw, ckk);
                if (w->requires_grad) dw_eq.mat(plan.co, ckk).noalias() += dout * colb;
                if (b->requires_grad)
                    for (int64_t o = 0; o < plan.co; ++o) b->grad[o] += dout.row(o).sum();
                if (need_dx) {
                    MatMap dcolb(dcol.data() + n * hw * ckk, hw, ckk);
                    dcolb.noalias() = dout.transpose() * w_eq_saved->mat(plan.co, ckk);
                }
            }
            if (w->requires_grad) {
                // Un-flip back into the [Ci,Co,kh,kw] layout.
                w->ensure_grad();
                const int64_t ci = w->value.dim(0), co = w->value.dim(1);
                for (int64_t i = 0; i < ci; ++i)
                    for (int64_t o = 0; o < co; ++o)
                        for (int64_t ky = 0; ky < plan.kh; ++ky)
                            for (int64_t kx = 0; kx < plan.kw; ++kx)
                                w->grad.at4(i, o, plan.kh - 1 - ky, plan.kw - 1 - kx) +=
                                    dw_eq.at4(o, i, ky, kx);
            }
            if (need_dx) {
                Tensor dx;
                raw::col2im(dcol, x->value.shape(), plan.kh, plan.kw, plan.stride, plan.pad, dx);
                accumulate(x, dx.array());
            }
        };
    }
    return out;
}

NodeRef global_avg_pool(const NodeRef& x) {
    const int64_t bs = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    const int64_t hw = h * w;
    Tensor v({bs, c});
    for (int64_t n = 0; n < bs; ++n)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* p = x->value.data() + (n * c + ch) * hw;
            double s = 0.0;
            for (int64_t i = 0; i < hw; ++i) s += p[i];
            v.at(n, ch) = s / static_cast<double>(hw);
        }
    auto out = make(tape_of(x), std::move(v), x->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, x, bs, c, hw] {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (int64_t n = 0; n < bs; ++n)
                for (int64_t ch = 0; ch < c; ++ch) {
                    double g = self->grad.at(n, ch) / static_cast<double>(hw);
                    double* p = x->grad.data() + (n * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i) p[i] += g;
                }
        };
    }
    return out;
}

NodeRef channel_affine(const NodeRef& x, const std::vector<double>& scale,
                       const std::vector<double>& shift) {
    const int64_t bs = x->value.dim(0), c = x->value.dim(1), hw = x->value.dim(2) * x->value.dim(3);
    if (static_cast<int64_t>(scale.size()) != c || static_cast<int64_t>(shift.size()) != c)
        throw std::invalid_argument("channel_affine: per-channel constant size mismatch");
    Tensor v(x->value.shape());
    for (int64_t n = 0; n < bs; ++n)
        for (int64_t ch = 0; ch < c; ++ch) {
            const double* src = x->value.data() + (n * c + ch) * hw;
            double* dst = v.data() + (n * c + ch) * hw;
            const double s = scale[static_cast<size_t>(ch)], t = shift[static_cast<size_t>(ch)];
            for (int64_t i = 0; i < hw; ++i) dst[i] = src[i] * s + t;
        }
    auto out = make(tape_of(x), std::move(v), x->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        auto sc = scale;
        out->backward_fn = [self, x, sc, bs, c, hw] {
            if (!x->requires_grad) return;
            x->ensure_grad();
            for (int64_t n = 0; n < bs; ++n)
                for (int64_t ch = 0; ch < c; ++ch) {
                    const double* g = self->grad.data() + (n * c + ch) * hw;
                    double* dst = x->grad.data() + (n * c + ch) * hw;
                    for (int64_t i = 0; i < hw; ++i) dst[i] += g[i] * sc[static_cast<size_t>(ch)];
                }
        };
    }
    return out;
}

NodeRef concat_channels(const std::vector<NodeRef>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input");
    const int64_t bs = xs[0]->value.dim(0), h = xs[0]->value.dim(2), w = xs[0]->value.dim(3);
    int64_t ctot = 0;
    bool rg = false;
    for (const auto& x : xs) {
        if (x->value.dim(0) != bs || x->value.dim(2) != h || x->value.dim(3) != w)
            throw std::invalid_argument("concat_channels: incompatible shapes");
        ctot += x->value.dim(1);
        rg = rg || x->requires_grad;
    }
    const int64_t hw = h * w;
    Tensor v({bs, ctot, h, w});
    for (int64_t n = 0; n < bs; ++n) {
        int64_t coff = 0;
        for (const auto& x : xs) {
            const int64_t c = x->value.dim(1);
            std::copy(x->value.data() + n * c * hw, x->value.data() + (n + 1) * c * hw,
                      v.data() + (n * ctot + coff) * hw);
            coff += c;
        }
    }
    auto out = make(tape_of(xs[0]), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        auto parents = xs;
        out->backward_fn = [self, parents, bs, ctot, hw] {
            for (int64_t n = 0; n < bs; ++n) {
                int64_t coff = 0;
                for (const auto& x : parents) {
                    const int64_t c = x->value.dim(1);
                    if (x->requires_grad) {
                        x->ensure_grad();
                        const double* src = self->grad.data() + (n * ctot + coff) * hw;
                        double* dst = x->grad.data() + n * c * hw;
                        for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
                    }
                    coff += c;
                }
            }
        };
    }
    return out;
}

NodeRef group_norm(const NodeRef& x, const NodeRef& gamma, const NodeRef& beta, int64_t groups,
                   double eps) {
    check_same_tape(x, gamma);
    check_same_tape(x, beta);
    const int64_t bs = x->value.dim(0), c = x->value.dim(1), h = x->value.dim(2), w = x->value.dim(3);
    if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
    const int64_t cg = c / groups;
    const int64_t m = cg * h * w;  // elements per (sample, group)
    const int64_t hw = h * w;
    auto xhat = std::make_shared<Tensor>(Shape{bs, c, h, w});
    auto inv_std = std::make_shared<Tensor>(Shape{bs, groups});
    Tensor v({bs, c, h, w});
    for (int64_t n = 0; n < bs; ++n) {
        for (int64_t g = 0; g < groups; ++g) {
            const double* xp = x->value.data() + (n * c + g * cg) * hw;
            double* xh = xhat->data() + (n * c + g * cg) * hw;
            double* vp = v.data() + (n * c + g * cg) * hw;
            double mu = 0.0;
            for (int64_t i = 0; i < m; ++i) mu += xp[i];
            mu /= static_cast<double>(m);
            double var = 0.0;
            for (int64_t i = 0; i < m; ++i) {
                double d = xp[i] - mu;
                var += d * d;
            }
            var /= static_cast<double>(m);
            const double inv = 1.0 / std::sqrt(var + eps);
            inv_std->at(n, g) = inv;
            for (int64_t i = 0; i < m; ++i) xh[i] = (xp[i] - mu) * inv;
            for (int64_t cc = 0; cc < cg; ++cc) {
                const double ga = gamma->value[g * cg + cc], be = beta->value[g * cg + cc];
                for (int64_t i = 0; i < hw; ++i) vp[cc * hw + i] = ga * xh[cc * hw + i] + be;
            }
        }
    }
    bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
    auto out = make(tape_of(x), std::move(v), rg);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, x, gamma, beta, xhat, inv_std, bs, c, hw, cg, groups, m] {
            if (gamma->requires_grad) gamma->ensure_grad();
            if (beta->requires_grad) beta->ensure_grad();
            if (x->requires_grad) x->ensure_grad();
            std::vector<double> dxhat(static_cast<size_t>(m));
            for (int64_t n = 0; n < bs; ++n) {
                for (int64_t g = 0; g < groups; ++g) {
                    const double* dy = self->grad.data() + (n * c + g * cg) * hw;
                    const double* xh = xhat->data() + (n * c + g * cg) * hw;
                    for (int64_t cc = 0; cc < cg; ++cc) {
                        const int64_t ch = g * cg + cc;
                        double s_dy = 0.0, s_dyxh = 0.0;
                        for (int64_t i = 0; i < hw; ++i) {
                            s_dy += dy[cc * hw + i];
                            s_dyxh += dy[cc * hw + i] * xh[cc * hw + i];
                        }
                        if (beta->requires_grad) beta->grad[ch] += s_dy;
                        if (gamma->requires_grad) gamma->grad[ch] += s_dyxh;
                    }
                    if (x->requires_grad) {
                        double mean_dxhat = 0.0, mean_dxhat_xh = 0.0;
                        for (int64_t cc = 0; cc < cg; ++cc) {
                            const double ga = gamma->value[g * cg + cc];
                            for (int64_t i = 0; i < hw; ++i) {
                                const double d = dy[cc * hw + i] * ga;
                                dxhat[static_cast<size_t>(cc * hw + i)] = d;
                                mean_dxhat += d;
                                mean_dxhat_xh += d * xh[cc * hw + i];
                            }
                        }
                        mean_dxhat /= static_cast<double>(m);
                        mean_dxhat_xh /= static_cast<double>(m);
                        const double inv = inv_std->at(n, g);
                        double* dxp = x->grad.data() + (n * c + g * cg) * hw;
                        for (int64_t i = 0; i < m; ++i)
                            dxp[i] += inv * (dxhat[static_cast<size_t>(i)] - mean_dxhat -
                                             xh[i] * mean_dxhat_xh);
                    }
                }
            }
        };
    }
    return out;
}

NodeRef grl(const NodeRef& a, double lambda) {
    auto out = make(tape_of(a), a->value, a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a, lambda] { accumulate(a, self->grad.array() * (-lambda)); };
    }
    return out;
}

NodeRef detach(const NodeRef& a) { return tape_of(a)->leaf(a->value, false); }

NodeRef reshape(const NodeRef& a, Shape s) {
    auto out = make(tape_of(a), a->value.reshaped(std::move(s)), a->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, a] { accumulate(a, self->grad.array()); };
    }
    return out;
}

NodeRef log_softmax(const NodeRef& z) {
    const int64_t bs = z->value.dim(0), c = z->value.dim(1);
    Tensor v({bs, c});
    for (int64_t i = 0; i < bs; ++i) {
        double m = z->value.at(i, 0);
        for (int64_t j = 1; j < c; ++j) m = std::max(m, z->value.at(i, j));
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(z->value.at(i, j) - m);
        const double lse = m + std::log(s);
        for (int64_t j = 0; j < c; ++j) v.at(i, j) = z->value.at(i, j) - lse;
    }
    auto out = make(tape_of(z), std::move(v), z->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        out->backward_fn = [self, z, bs, c] {
            if (!z->requires_grad) return;
            z->ensure_grad();
            for (int64_t i = 0; i < bs; ++i) {
                double gsum = 0.0;
                for (int64_t j = 0; j < c; ++j) gsum += self->grad.at(i, j);
                for (int64_t j = 0; j < c; ++j)
                    z->grad.at(i, j) += self->grad.at(i, j) - std::exp(self->value.at(i, j)) * gsum;
            }
        };
    }
    return out;
}

NodeRef softmax_ce(const NodeRef& logits, const std::vector<int>& labels) {
    const int64_t bs = logits->value.dim(0), c = logits->value.dim(1);
    if (static_cast<int64_t>(labels.size()) != bs)
        throw std::invalid_argument("softmax_ce: label count mismatch");
    for (int y : labels)
        if (y < 0 || y >= c) throw std::out_of_range("softmax_ce: label out of range");
    auto probs = std::make_shared<Tensor>(Shape{bs, c});
    Tensor v({bs, 1});
    for (int64_t i = 0; i < bs; ++i) {
        double m = logits->value.at(i, 0);
        for (int64_t j = 1; j < c; ++j) m = std::max(m, logits->value.at(i, j));
        double s = 0.0;
        for (int64_t j = 0; j < c; ++j) s += std::exp(logits->value.at(i, j) - m);
        const double lse = m + std::log(s);
        for (int64_t j = 0; j < c; ++j) probs->at(i, j) = std::exp(logits->value.at(i, j) - lse);
        v[i] = lse - logits->value.at(i, labels[static_cast<size_t>(i)]);
    }
    auto out = make(tape_of(logits), std::move(v), logits->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        auto lab = labels;
        out->backward_fn = [self, logits, probs, lab, bs, c] {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            for (int64_t i = 0; i < bs; ++i) {
                const double g = self->grad[i];
                for (int64_t j = 0; j < c; ++j) logits->grad.at(i, j) += g * probs->at(i, j);
                logits->grad.at(i, lab[static_cast<size_t>(i)]) -= g;
            }
        };
    }
    return out;
}

NodeRef cw_margin(const NodeRef& logits, const std::vector<int>& labels, double kappa) {
    const int64_t bs = logits->value.dim(0), c = logits->value.dim(1);
    if (c < 2) throw std::invalid_argument("cw_margin: needs at least 2 classes");
    if (static_cast<int64_t>(labels.size()) != bs)
        throw std::invalid_argument("cw_margin: label count mismatch");
    auto top_other = std::make_shared<std::vector<int64_t>>(static_cast<size_t>(bs));
    auto active = std::make_shared<std::vector<char>>(static_cast<size_t>(bs));
    Tensor v({bs, 1});
    for (int64_t i = 0; i < bs; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        int64_t jstar = -1;
        double best = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < c; ++j) {
            if (j == y) continue;
            if (logits->value.at(i, j) > best) {
                best = logits->value.at(i, j);
                jstar = j;
            }
        }
        const double margin = logits->value.at(i, y) - best;
        (*top_other)[static_cast<size_t>(i)] = jstar;
        (*active)[static_cast<size_t>(i)] = margin > -kappa ? 1 : 0;
        v[i] = -std::max(margin, -kappa);
    }
    auto out = make(tape_of(logits), std::move(v), logits->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        auto lab = labels;
        out->backward_fn = [self, logits, lab, top_other, active, bs] {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            for (int64_t i = 0; i < bs; ++i) {
                if (!(*active)[static_cast<size_t>(i)]) continue;
                const double g = self->grad[i];
                logits->grad.at(i, lab[static_cast<size_t>(i)]) -= g;
                logits->grad.at(i, (*top_other)[static_cast<size_t>(i)]) += g;
            }
        };
    }
    return out;
}

NodeRef dlr(const NodeRef& logits, const std::vector<int>& labels, double denom_floor) {
    const int64_t bs = logits->value.dim(0), c = logits->value.dim(1);
    if (c < 3) throw std::invalid_argument("dlr: needs at least 3 classes");
    if (static_cast<int64_t>(labels.size()) != bs)
        throw std::invalid_argument("dlr: label count mismatch");
    struct PerSample {
        int64_t jstar, i1, i3;
        double num, den;
        bool floored;
    };
    auto ctx = std::make_shared<std::vector<PerSample>>(static_cast<size_t>(bs));
    Tensor v({bs, 1});
    for (int64_t i = 0; i < bs; ++i) {
        const int y = labels[static_cast<size_t>(i)];
        std::vector<int64_t> order(static_cast<size_t>(c));
        for (int64_t j = 0; j < c; ++j) order[static_cast<size_t>(j)] = j;
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return logits->value.at(i, a) > logits->value.at(i, b);
        });
        int64_t jstar = -1;
        double best = -std::numeric_limits<double>::infinity();
        for (int64_t j = 0; j < c; ++j) {
            if (j == y) continue;
            if (logits->value.at(i, j) > best) {
                best = logits->value.at(i, j);
                jstar = j;
            }
        }
        const double num = logits->value.at(i, y) - best;
        const double den_raw = logits->value.at(i, order[0]) - logits->value.at(i, order[2]);
        const bool floored = den_raw <= denom_floor;
        const double den = floored ? denom_floor : den_raw;
        (*ctx)[static_cast<size_t>(i)] = {jstar, order[0], order[2], num, den, floored};
        v[i] = -num / den;
    }
    auto out = make(tape_of(logits), std::move(v), logits->requires_grad);
    if (out->requires_grad) {
        Node* self = out.get();
        auto lab = labels;
        out->backward_fn = [self, logits, lab, ctx, bs] {
            if (!logits->requires_grad) return;
            logits->ensure_grad();
            for (int64_t i = 0; i < bs; ++i) {
                const auto& s = (*ctx)[static_cast<size_t>(i)];
                const double g = self->grad[i];
                logits->grad.at(i, lab[static_cast<size_t>(i)]) -= g / s.den;
                logits->grad.at(i, s.jstar) += g / s.den;
                if (!s.floored) {
                    const double dden = g * s.num / (s.den * s.den);
                    logits->grad.at(i, s.i1) += dden;
                    logits->grad.at(i, s.i3) -= dden;
                }
            }
        };
    }
    return out;
}

}  // namespace disro::nn
