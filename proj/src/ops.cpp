#include "separator/ops.hpp"

#include <cmath>
#include <cstring>

namespace separator::ad {

namespace {

Tensor make_op(const char* op, Shape shape, std::vector<double> value,
               std::vector<NodePtr> parents, std::function<void(Node&)> bp) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    bool req = false;
    if (grad_enabled()) {
        for (const auto& p : parents)
            if (p && p->requires_grad) { req = true; break; }
    }
    if (req) {
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backprop = std::move(bp);
    }
    return Tensor(std::move(n));
}

void require(bool cond, const std::string& msg) {
    if (!cond) throw shape_error(msg);
}

size_t last_dim(const Tensor& t) { return t.shape().back(); }

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& w) {
    require(a.rank() >= 2 && w.rank() == 2,
            "matmul: need a rank>=2 and w rank 2, got " + shape_str(a.shape()) +
                " and " + shape_str(w.shape()));
    const size_t k = last_dim(a);
    require(k == w.shape()[0], "matmul: inner dims differ, " + shape_str(a.shape()) +
                                   " vs " + shape_str(w.shape()));
    const size_t n = w.shape()[1];
    const size_t m = a.size() / k;

    std::vector<double> out(m * n, 0.0);
    {
        const double* A = a.values().data();
        const double* W = w.values().data();
        double* C = out.data();
        for (size_t i = 0; i < m; ++i) {
            const double* arow = A + i * k;
            double* crow = C + i * n;
            for (size_t l = 0; l < k; ++l) {
                const double ail = arow[l];
                const double* wrow = W + l * n;
                for (size_t j = 0; j < n; ++j) crow[j] += ail * wrow[j];
            }
        }
    }
    Shape out_shape(a.shape());
    out_shape.back() = n;

    auto pa = a.node();
    auto pw = w.node();
    return make_op("matmul", std::move(out_shape), std::move(out), {pa, pw},
                   [pa, pw, m, k, n](Node& self) {
                       const double* G = self.grad.data();
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           double* dA = pa->grad.data();
                           const double* W = pw->value.data();
                           for (size_t i = 0; i < m; ++i) {
                               const double* grow = G + i * n;
                               double* darow = dA + i * k;
                               for (size_t l = 0; l < k; ++l) {
                                   const double* wrow = W + l * n;
                                   double acc = 0.0;
                                   for (size_t j = 0; j < n; ++j) acc += grow[j] * wrow[j];
                                   darow[l] += acc;
                               }
                           }
                       }
                       if (pw->requires_grad) {
                           pw->ensure_grad();
                           double* dW = pw->grad.data();
                           const double* A = pa->value.data();
                           for (size_t i = 0; i < m; ++i) {
                               const double* arow = A + i * k;
                               const double* grow = G + i * n;
                               for (size_t l = 0; l < k; ++l) {
                                   const double ail = arow[l];
                                   double* dwrow = dW + l * n;
                                   for (size_t j = 0; j < n; ++j) dwrow[j] += ail * grow[j];
                               }
                           }
                       }
                   });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b) {
    require(a.rank() == 3 && b.rank() == 3,
            "bmm: need rank-3 inputs, got " + shape_str(a.shape()) + " and " +
                shape_str(b.shape()));
    const size_t g = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
    require(b.shape()[0] == g, "bmm: batch dims differ, " + shape_str(a.shape()) +
                                   " vs " + shape_str(b.shape()));
    const size_t n = transpose_b ? b.shape()[1] : b.shape()[2];
    const size_t bk = transpose_b ? b.shape()[2] : b.shape()[1];
    require(bk == k, "bmm: inner dims differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));

    std::vector<double> out(g * m * n, 0.0);
    {
        const double* A = a.values().data();
        const double* B = b.values().data();
        double* C = out.data();
        for (size_t gi = 0; gi < g; ++gi) {
            const double* Ag = A + gi * m * k;
            const double* Bg = B + gi * (transpose_b ? n * k : k * n);
            double* Cg = C + gi * m * n;
            if (!transpose_b) {
                for (size_t i = 0; i < m; ++i)
                    for (size_t l = 0; l < k; ++l) {
                        const double ail = Ag[i * k + l];
                        const double* brow = Bg + l * n;
                        double* crow = Cg + i * n;
                        for (size_t j = 0; j < n; ++j) crow[j] += ail * brow[j];
                    }
            } else {
                for (size_t i = 0; i < m; ++i)
                    for (size_t j = 0; j < n; ++j) {
                        const double* arow = Ag + i * k;
                        const double* brow = Bg + j * k;
                        double acc = 0.0;
                        for (size_t l = 0; l < k; ++l) acc += arow[l] * brow[l];
                        Cg[i * n + j] = acc;
                    }
            }
        }
    }

    auto pa = a.node();
    auto pb = b.node();
    return make_op("bmm", {g, m, n}, std::move(out), {pa, pb},
                   [pa, pb, g, m, k, n, transpose_b](Node& self) {
                       const double* G = self.grad.data();
                       if (pa->requires_grad) pa->ensure_grad();
                       if (pb->requires_grad) pb->ensure_grad();
                       for (size_t gi = 0; gi < g; ++gi) {
                           const double* Gg = G + gi * m * n;
                           const double* Ag = pa->value.data() + gi * m * k;
                           const double* Bg =
                               pb->value.data() + gi * (transpose_b ? n * k : k * n);
                           if (pa->requires_grad) {
                               double* dAg = pa->grad.data() + gi * m * k;
                               // dA = G * B^T (no trans) or G * B (trans)
                               for (size_t i = 0; i < m; ++i)
                                   for (size_t l = 0; l < k; ++l) {
                                       double acc = 0.0;
                                       if (!transpose_b)
                                           for (size_t j = 0; j < n; ++j)
                                               acc += Gg[i * n + j] * Bg[l * n + j];
                                       else
                                           for (size_t j = 0; j < n; ++j)
                                               acc += Gg[i * n + j] * Bg[j * k + l];
                                       dAg[i * k + l] += acc;
                                   }
                           }
                           if (pb->requires_grad) {
                               double* dBg =
                                   pb->grad.data() + gi * (transpose_b ? n * k : k * n);
                               if (!transpose_b) {
                                   // dB[l,j] = sum_i A[i,l] G[i,j]
                                   for (size_t i = 0; i < m; ++i)
                                       for (size_t l = 0; l < k; ++l) {
                                           const double ail = Ag[i * k + l];
                                           for (size_t j = 0; j < n; ++j)
                                               dBg[l * n + j] += ail * Gg[i * n + j];
                                       }
                               } else {
                                   // dB[j,l] = sum_i G[i,j] A[i,l]
                                   for (size_t i = 0; i < m; ++i)
                                       for (size_t j = 0; j < n; ++j) {
                                           const double gij = Gg[i * n + j];
                                           for (size_t l = 0; l < k; ++l)
                                               dBg[j * k + l] += gij * Ag[i * k + l];
                                       }
                               }
                           }
                       }
                   });
}

Tensor add(const Tensor& a, const Tensor& b) {
    const size_t na = a.size(), nb = b.size();
    bool suffix_ok = b.rank() <= a.rank();
    if (suffix_ok) {
        for (size_t i = 0; i < b.rank(); ++i)
            if (b.shape()[b.rank() - 1 - i] != a.shape()[a.rank() - 1 - i]) {
                suffix_ok = false;
                break;
            }
    }
    require(suffix_ok, "add: shape " + shape_str(b.shape()) +
                           " is not a trailing suffix of " + shape_str(a.shape()));

    std::vector<double> out(a.values());
    for (size_t i = 0; i < na; ++i) out[i] += b.values()[i % nb];

    auto pa = a.node();
    auto pb = b.node();
    return make_op("add", a.shape(), std::move(out), {pa, pb},
                   [pa, pb, na, nb](Node& self) {
                       const double* G = self.grad.data();
                       if (pa->requires_grad) {
                           pa->ensure_grad();
                           double* da = pa->grad.data();
                           for (size_t i = 0; i < na; ++i) da[i] += G[i];
                       }
                       if (pb->requires_grad) {
                           pb->ensure_grad();
                           double* db = pb->grad.data();
                           for (size_t i = 0; i < na; ++i) db[i % nb] += G[i];
                       }
                   });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require(a.shape() == b.shape(), "mul: shapes differ, " + shape_str(a.shape()) +
                                        " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];

    auto pa = a.node();
    auto pb = b.node();
    return make_op("mul", a.shape(), std::move(out), {pa, pb}, [pa, pb](Node& self) {
        const double* G = self.grad.data();
        const size_t n = self.value.size();
        if (pa->requires_grad) {
            pa->ensure_grad();
            for (size_t i = 0; i < n; ++i) pa->grad[i] += G[i] * pb->value[i];
        }
        if (pb->requires_grad) {
            pb->ensure_grad();
            for (size_t i = 0; i < n; ++i) pb->grad[i] += G[i] * pa->value[i];
        }
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * c;
    auto pa = a.node();
    return make_op("scale", a.shape(), std::move(out), {pa}, [pa, c](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) pa->grad[i] += self.grad[i] * c;
    });
}

Tensor add_const(const Tensor& a, double c) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + c;
    auto pa = a.node();
    return make_op("add_const", a.shape(), std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] > 0 ? a.values()[i] : 0.0;
    auto pa = a.node();
    return make_op("relu", a.shape(), std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            if (pa->value[i] > 0) pa->grad[i] += self.grad[i];
    });
}

Tensor softplus(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) {
        const double x = a.values()[i];
        out[i] = x > 30.0 ? x : std::log1p(std::exp(x));
    }
    auto pa = a.node();
    return make_op("softplus", a.shape(), std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) {
            const double x = pa->value[i];
            const double sig = 1.0 / (1.0 + std::exp(-x));
            pa->grad[i] += self.grad[i] * sig;
        }
    });
}

Tensor log_(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) {
        require(a.values()[i] > 0.0, "log: non-positive input at index " + std::to_string(i));
        out[i] = std::log(a.values()[i]);
    }
    auto pa = a.node();
    return make_op("log", a.shape(), std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            pa->grad[i] += self.grad[i] / pa->value[i];
    });
}

Tensor exp_(const Tensor& a) {
    std::vector<double> out(a.size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a.values()[i]);
    auto pa = a.node();
    return make_op("exp", a.shape(), std::move(out), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i)
            pa->grad[i] += self.grad[i] * self.value[i];
    });
}

namespace {

Tensor softmax_impl(const Tensor& a, std::vector<uint8_t> mask, const char* name) {
    const size_t cols = last_dim(a);
    const size_t rows = a.size() / cols;
    const bool masked = !mask.empty();
    if (masked)
        require(mask.size() == a.size(), std::string(name) + ": mask size " +
                                             std::to_string(mask.size()) +
                                             " != tensor size " + std::to_string(a.size()));

    std::vector<double> out(a.size(), 0.0);
    const double* X = a.values().data();
    for (size_t r = 0; r < rows; ++r) {
        const double* x = X + r * cols;
        const uint8_t* m = masked ? mask.data() + r * cols : nullptr;
        double mx = -HUGE_VAL;
        for (size_t j = 0; j < cols; ++j)
            if (!m || m[j]) mx = std::max(mx, x[j]);
        if (mx == -HUGE_VAL)
            throw std::runtime_error(std::string(name) + ": fully masked row " +
                                     std::to_string(r));
        double z = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            if (!m || m[j]) {
                out[r * cols + j] = std::exp(x[j] - mx);
                z += out[r * cols + j];
            }
        }
        for (size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
    }

    auto pa = a.node();
    return make_op(name, a.shape(), std::move(out), {pa}, [pa, rows, cols](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t r = 0; r < rows; ++r) {
            const double* y = self.value.data() + r * cols;
            const double* dy = self.grad.data() + r * cols;
            double dot = 0.0;
            for (size_t j = 0; j < cols; ++j) dot += y[j] * dy[j];
            double* dx = pa->grad.data() + r * cols;
            for (size_t j = 0; j < cols; ++j) dx[j] += y[j] * (dy[j] - dot);
        }
    });
}

}  // namespace

Tensor softmax_last(const Tensor& a) { return softmax_impl(a, {}, "softmax"); }

Tensor softmax_last_masked(const Tensor& a, std::vector<uint8_t> mask) {
    return softmax_impl(a, std::move(mask), "softmax_masked");
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const size_t cols = last_dim(x);
    require(gain.rank() == 1 && gain.size() == cols && bias.rank() == 1 &&
                bias.size() == cols,
            "layer_norm: gain/bias must be [n] with n = " + std::to_string(cols) +
                ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    const size_t rows = x.size() / cols;

    std::vector<double> out(x.size());
    auto xhat = std::make_shared<std::vector<double>>(x.size());
    auto invstd = std::make_shared<std::vector<double>>(rows);
    const double* X = x.values().data();
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = X + r * cols;
        double mean = 0.0;
        for (size_t j = 0; j < cols; ++j) mean += xr[j];
        mean /= static_cast<double>(cols);
        double var = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            const double d = xr[j] - mean;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double inv = 1.0 / std::sqrt(var + eps);
        (*invstd)[r] = inv;
        for (size_t j = 0; j < cols; ++j) {
            const double xh = (xr[j] - mean) * inv;
            (*xhat)[r * cols + j] = xh;
            out[r * cols + j] = gain.values()[j] * xh + bias.values()[j];
        }
    }

    auto px = x.node();
    auto pg = gain.node();
    auto pb = bias.node();
    return make_op("layer_norm", x.shape(), std::move(out), {px, pg, pb},
                   [px, pg, pb, xhat, invstd, rows, cols](Node& self) {
                       for (size_t r = 0; r < rows; ++r) {
                           const double* dy = self.grad.data() + r * cols;
                           const double* xh = xhat->data() + r * cols;
                           if (pg->requires_grad) {
                               pg->ensure_grad();
                               for (size_t j = 0; j < cols; ++j)
                                   pg->grad[j] += dy[j] * xh[j];
                           }
                           if (pb->requires_grad) {
                               pb->ensure_grad();
                               for (size_t j = 0; j < cols; ++j) pb->grad[j] += dy[j];
                           }
                           if (px->requires_grad) {
                               px->ensure_grad();
                               double m1 = 0.0, m2 = 0.0;
                               for (size_t j = 0; j < cols; ++j) {
                                   const double dxh = dy[j] * pg->value[j];
                                   m1 += dxh;
                                   m2 += dxh * xh[j];
                               }
                               m1 /= static_cast<double>(cols);
                               m2 /= static_cast<double>(cols);
                               double* dx = px->grad.data() + r * cols;
                               const double inv = (*invstd)[r];
                               for (size_t j = 0; j < cols; ++j) {
                                   const double dxh = dy[j] * pg->value[j];
                                   dx[j] += inv * (dxh - m1 - xh[j] * m2);
                               }
                           }
                       }
                   });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids,
                        const Shape& out_leading) {
    require(table.rank() == 2, "embedding_lookup: table must be [V, d], got " +
                                   shape_str(table.shape()));
    require(numel(out_leading) == ids.size(),
            "embedding_lookup: leading shape " + shape_str(out_leading) + " != " +
                std::to_string(ids.size()) + " ids");
    const size_t v = table.shape()[0], d = table.shape()[1];
    for (int id : ids)
        require(id >= 0 && static_cast<size_t>(id) < v,
                "embedding_lookup: id " + std::to_string(id) + " out of range [0, " +
                    std::to_string(v) + ")");

    std::vector<double> out(ids.size() * d);
    for (size_t i = 0; i < ids.size(); ++i)
        std::memcpy(out.data() + i * d,
                    table.values().data() + static_cast<size_t>(ids[i]) * d,
                    d * sizeof(double));
    Shape shape(out_leading);
    shape.push_back(d);

    auto pt = table.node();
    return make_op("embedding_lookup", std::move(shape), std::move(out), {pt},
                   [pt, ids, d](Node& self) {
                       if (!pt->requires_grad) return;
                       pt->ensure_grad();
                       for (size_t i = 0; i < ids.size(); ++i) {
                           double* dst = pt->grad.data() + static_cast<size_t>(ids[i]) * d;
                           const double* src = self.grad.data() + i * d;
                           for (size_t j = 0; j < d; ++j) dst[j] += src[j];
                       }
                   });
}

namespace {
struct AxisView {
    size_t outer, axis, inner;
};
AxisView axis_view(const Shape& s, size_t axis) {
    AxisView v{1, s[axis], 1};
    for (size_t i = 0; i < axis; ++i) v.outer *= s[i];
    for (size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
    return v;
}
}  // namespace

Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    require(!parts.empty(), "concat: no inputs");
    const Shape& s0 = parts[0].shape();
    require(axis < s0.size(), "concat: axis " + std::to_string(axis) +
                                  " out of range for " + shape_str(s0));
    size_t total_axis = 0;
    for (const auto& p : parts) {
        require(p.rank() == s0.size(), "concat: rank mismatch, " + shape_str(s0) +
                                           " vs " + shape_str(p.shape()));
        for (size_t i = 0; i < s0.size(); ++i)
            if (i != axis)
                require(p.shape()[i] == s0[i], "concat: shape mismatch, " +
                                                   shape_str(s0) + " vs " +
                                                   shape_str(p.shape()));
        total_axis += p.shape()[axis];
    }
    Shape out_shape(s0);
    out_shape[axis] = total_axis;
    const AxisView ov = axis_view(out_shape, axis);

    std::vector<double> out(numel(out_shape));
    std::vector<size_t> offsets;
    size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const AxisView pv = axis_view(p.shape(), axis);
        for (size_t o = 0; o < pv.outer; ++o)
            std::memcpy(out.data() + (o * ov.axis + off) * ov.inner,
                        p.values().data() + o * pv.axis * pv.inner,
                        pv.axis * pv.inner * sizeof(double));
        off += p.shape()[axis];
    }

    std::vector<NodePtr> parents;
    std::vector<size_t> axis_sizes;
    for (const auto& p : parts) {
        parents.push_back(p.node());
        axis_sizes.push_back(p.shape()[axis]);
    }
    return make_op("concat", std::move(out_shape), std::move(out), parents,
                   [parents, offsets, axis_sizes, ov](Node& self) {
                       for (size_t pi = 0; pi < parents.size(); ++pi) {
                           const auto& p = parents[pi];
                           if (!p->requires_grad) continue;
                           p->ensure_grad();
                           const size_t pa = axis_sizes[pi];
                           for (size_t o = 0; o < ov.outer; ++o) {
                               const double* src =
                                   self.grad.data() + (o * ov.axis + offsets[pi]) * ov.inner;
                               double* dst = p->grad.data() + o * pa * ov.inner;
                               for (size_t i = 0; i < pa * ov.inner; ++i) dst[i] += src[i];
                           }
                       }
                   });
}

Tensor slice(const Tensor& a, size_t axis, size_t start, size_t len) {
    require(axis < a.rank(), "slice: axis " + std::to_string(axis) +
                                 " out of range for " + shape_str(a.shape()));
    require(start + len <= a.shape()[axis],
            "slice: range [" + std::to_string(start) + ", " + std::to_string(start + len) +
                ") exceeds axis of " + shape_str(a.shape()));
    const AxisView av = axis_view(a.shape(), axis);
    Shape out_shape(a.shape());
    out_shape[axis] = len;

    std::vector<double> out(numel(out_shape));
    for (size_t o = 0; o < av.outer; ++o)
        std::memcpy(out.data() + o * len * av.inner,
                    a.values().data() + (o * av.axis + start) * av.inner,
                    len * av.inner * sizeof(double));

    auto pa = a.node();
    return make_op("slice", std::move(out_shape), std::move(out), {pa},
                   [pa, av, start, len](Node& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t o = 0; o < av.outer; ++o) {
                           const double* src = self.grad.data() + o * len * av.inner;
                           double* dst = pa->grad.data() + (o * av.axis + start) * av.inner;
                           for (size_t i = 0; i < len * av.inner; ++i) dst[i] += src[i];
                       }
                   });
}

Tensor reshape(const Tensor& a, Shape new_shape) {
    require(numel(new_shape) == a.size(), "reshape: " + shape_str(a.shape()) +
                                              " cannot become " + shape_str(new_shape));
    auto pa = a.node();
    return make_op("reshape", std::move(new_shape), a.values(), {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (size_t i = 0; i < self.value.size(); ++i) pa->grad[i] += self.grad[i];
    });
}

Tensor split_heads(const Tensor& a, size_t heads) {
    require(a.rank() == 3, "split_heads: need [B, T, D], got " + shape_str(a.shape()));
    const size_t B = a.shape()[0], T = a.shape()[1], D = a.shape()[2];
    require(D % heads == 0, "split_heads: D=" + std::to_string(D) +
                                " not divisible by heads=" + std::to_string(heads));
    const size_t dh = D / heads;

    std::vector<double> out(a.size());
    const double* X = a.values().data();
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < T; ++t)
            for (size_t h = 0; h < heads; ++h)
                std::memcpy(out.data() + (((b * heads + h) * T + t) * dh),
                            X + (b * T + t) * D + h * dh, dh * sizeof(double));

    auto pa = a.node();
    return make_op("split_heads", {B * heads, T, dh}, std::move(out), {pa},
                   [pa, B, T, D, heads, dh](Node& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t b = 0; b < B; ++b)
                           for (size_t t = 0; t < T; ++t)
                               for (size_t h = 0; h < heads; ++h) {
                                   const double* src =
                                       self.grad.data() + ((b * heads + h) * T + t) * dh;
                                   double* dst = pa->grad.data() + (b * T + t) * D + h * dh;
                                   for (size_t i = 0; i < dh; ++i) dst[i] += src[i];
                               }
                   });
}

Tensor merge_heads(const Tensor& a, size_t heads) {
    require(a.rank() == 3, "merge_heads: need [B*H, T, dh], got " + shape_str(a.shape()));
    const size_t G = a.shape()[0], T = a.shape()[1], dh = a.shape()[2];
    require(G % heads == 0, "merge_heads: batch " + std::to_string(G) +
                                " not divisible by heads=" + std::to_string(heads));
    const size_t B = G / heads, D = heads * dh;

    std::vector<double> out(a.size());
    const double* X = a.values().data();
    for (size_t b = 0; b < B; ++b)
        for (size_t t = 0; t < T; ++t)
            for (size_t h = 0; h < heads; ++h)
                std::memcpy(out.data() + (b * T + t) * D + h * dh,
                            X + ((b * heads + h) * T + t) * dh, dh * sizeof(double));

    auto pa = a.node();
    return make_op("merge_heads", {B, T, D}, std::move(out), {pa},
                   [pa, B, T, D, heads, dh](Node& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t b = 0; b < B; ++b)
                           for (size_t t = 0; t < T; ++t)
                               for (size_t h = 0; h < heads; ++h) {
                                   const double* src =
                                       self.grad.data() + (b * T + t) * D + h * dh;
                                   double* dst =
                                       pa->grad.data() + ((b * heads + h) * T + t) * dh;
                                   for (size_t i = 0; i < dh; ++i) dst[i] += src[i];
                               }
                   });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    auto pa = a.node();
    return make_op("sum", {1}, {s}, {pa}, [pa](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (double& g : pa->grad) g += self.grad[0];
    });
}

Tensor mean_all(const Tensor& a) {
    require(a.size() > 0, "mean: empty tensor");
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    auto pa = a.node();
    return make_op("mean", {1}, {s * inv}, {pa}, [pa, inv](Node& self) {
        if (!pa->requires_grad) return;
        pa->ensure_grad();
        for (double& g : pa->grad) g += self.grad[0] * inv;
    });
}

Tensor norm_last(const Tensor& a) {
    const size_t cols = last_dim(a);
    const size_t rows = a.size() / cols;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    if (out_shape.empty()) out_shape = {1};

    std::vector<double> out(rows);
    for (size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            const double x = a.values()[r * cols + j];
            s += x * x;
        }
        out[r] = std::sqrt(s);
    }

    auto pa = a.node();
    return make_op("norm_last", std::move(out_shape), std::move(out), {pa},
                   [pa, rows, cols](Node& self) {
                       if (!pa->requires_grad) return;
                       pa->ensure_grad();
                       for (size_t r = 0; r < rows; ++r) {
                           const double denom = std::max(self.value[r], 1e-12);
                           const double g = self.grad[r] / denom;
                           for (size_t j = 0; j < cols; ++j)
                               pa->grad[r * cols + j] += g * pa->value[r * cols + j];
                       }
                   });
}

Tensor cross_entropy_logits(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<double>& weights) {
    require(logits.rank() == 2, "cross_entropy: logits must be [N, V], got " +
                                    shape_str(logits.shape()));
    const size_t n = logits.shape()[0], v = logits.shape()[1];
    require(targets.size() == n && weights.size() == n,
            "cross_entropy: " + std::to_string(n) + " rows vs " +
                std::to_string(targets.size()) + " targets / " +
                std::to_string(weights.size()) + " weights");
    require(n > 0, "cross_entropy: empty batch");
    double wsum = 0.0;
    for (double w : weights) wsum += w;
    require(wsum > 0.0, "cross_entropy: all weights zero");

    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double total = 0.0;
    const double* L = logits.values().data();
    for (size_t i = 0; i < n; ++i) {
        require(targets[i] >= 0 && static_cast<size_t>(targets[i]) < v,
                "cross_entropy: target " + std::to_string(targets[i]) +
                    " out of range [0, " + std::to_string(v) + ")");
        const double* row = L + i * v;
        double mx = row[0];
        for (size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < v; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (size_t j = 0; j < v; ++j) (*probs)[i * v + j] = std::exp(row[j] - lse);
        total += weights[i] * (lse - row[targets[i]]);
    }

    auto pl = logits.node();
    return make_op("cross_entropy", {1}, {total / wsum}, {pl},
                   [pl, probs, targets, weights, wsum, n, v](Node& self) {
                       if (!pl->requires_grad) return;
                       pl->ensure_grad();
                       const double g = self.grad[0] / wsum;
                       for (size_t i = 0; i < n; ++i) {
                           if (weights[i] == 0.0) continue;
                           const double wi = g * weights[i];
                           double* dst = pl->grad.data() + i * v;
                           const double* p = probs->data() + i * v;
                           for (size_t j = 0; j < v; ++j) dst[j] += wi * p[j];
                           dst[targets[i]] -= wi;
                       }
                   });
}

Tensor cross_entropy_logits_dist(const Tensor& logits,
                                 const std::vector<double>& target_dist) {
    require(logits.rank() == 2, "cross_entropy_dist: logits must be [N, K], got " +
                                    shape_str(logits.shape()));
    require(target_dist.size() == logits.size(),
            "cross_entropy_dist: target size " + std::to_string(target_dist.size()) +
                " != logits size " + std::to_string(logits.size()));
    const size_t n = logits.shape()[0], k = logits.shape()[1];
    require(n > 0, "cross_entropy_dist: empty batch");

    auto probs = std::make_shared<std::vector<double>>(logits.size());
    double total = 0.0;
    const double* L = logits.values().data();
    for (size_t i = 0; i < n; ++i) {
        const double* row = L + i * k;
        double mx = row[0];
        for (size_t j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (size_t j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (size_t j = 0; j < k; ++j) {
            (*probs)[i * k + j] = std::exp(row[j] - lse);
            total += target_dist[i * k + j] * (lse - row[j]);
        }
    }

    auto pl = logits.node();
    return make_op("cross_entropy_dist", {1}, {total / static_cast<double>(n)}, {pl},
                   [pl, probs, target_dist, n, k](Node& self) {
                       if (!pl->requires_grad) return;
                       pl->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(n);
                       for (size_t i = 0; i < n * k; ++i)
                           pl->grad[i] += g * ((*probs)[i] - target_dist[i]);
                   });
}

Tensor straight_through(const Tensor& continuous, const Tensor& quantized) {
    require(continuous.shape() == quantized.shape(),
            "straight_through: shapes differ, " + shape_str(continuous.shape()) +
                " vs " + shape_str(quantized.shape()));
    // Forward takes the quantized values; backward routes the full gradient
    // to `continuous`. `quantized` is deliberately not a graph parent, so
    // its gradient contribution is exactly zero.
    auto pc = continuous.node();
    return make_op("straight_through", quantized.shape(), quantized.values(), {pc},
                   [pc](Node& self) {
                       if (!pc->requires_grad) return;
                       pc->ensure_grad();
                       for (size_t i = 0; i < self.value.size(); ++i)
                           pc->grad[i] += self.grad[i];
                   });
}

Tensor stopgradient(const Tensor& a) {
    auto n = std::make_shared<Node>();
    n->shape = a.shape();
    n->value = a.values();
    n->op = "stopgradient";
    return Tensor(std::move(n));
}

}  // namespace separator::ad
