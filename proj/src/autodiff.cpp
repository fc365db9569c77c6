#include "tpinv/autodiff.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>
#include <unordered_set>

namespace tpinv {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev; }

Var constant(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = false;
    n->op = "const";
    return n;
}

Var make_param(Tensor v) {
    auto n = std::make_shared<Node>();
    n->value = std::move(v);
    n->requires_grad = true;
    n->op = "param";
    return n;
}

void backward(const Var& root) {
    if (!root) throw std::runtime_error("backward: null root");
    if (root->value.size() != 1)
        throw std::runtime_error("backward: root must be scalar, got shape " +
                                 root->value.shape_str());
    // Iterative topo sort (post-order DFS).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.get(), 0});
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            Node* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->ensure_grad()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->requires_grad && !n->grad.empty()) n->backprop(*n);
    }
}

namespace ops {

namespace {

Var make_node(Tensor value, std::vector<Var> parents,
              std::function<void(Node&)> backprop, const char* op) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->op = op;
    if (g_grad_enabled) {
        for (const auto& p : parents)
            if (p->requires_grad) { n->requires_grad = true; break; }
        if (n->requires_grad) {
            n->parents = std::move(parents);
            n->backprop = std::move(backprop);
        }
    }
    return n;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a->value.same_shape(b->value))
        throw std::runtime_error(std::string(op) + ": shape mismatch " +
                                 a->value.shape_str() + " vs " + b->value.shape_str());
}

Var unary(const Var& a, const char* name, std::function<Scalar(Scalar)> f,
          std::function<Scalar(Scalar, Scalar)> dfdx_times_g) {
    Tensor out(a->value.shape());
    const int n = a->value.size();
    for (int i = 0; i < n; ++i) out[i] = f(a->value[i]);
    return make_node(std::move(out), {a},
        [a, dfdx_times_g](Node& self) {
            Tensor& ga = a->ensure_grad();
            const int n = self.value.size();
            for (int i = 0; i < n; ++i)
                ga[i] += dfdx_times_g(a->value[i], self.grad[i]);
        }, name);
}

}  // namespace

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out(a->value.shape());
    const int n = out.size();
    for (int i = 0; i < n; ++i) out[i] = a->value[i] + b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < n; ++i) gb[i] += self.grad[i];
        }
    }, "add");
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out(a->value.shape());
    const int n = out.size();
    for (int i = 0; i < n; ++i) out[i] = a->value[i] - b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < n; ++i) ga[i] += self.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < n; ++i) gb[i] -= self.grad[i];
        }
    }, "sub");
}

Var neg(const Var& a) {
    return unary(a, "neg", [](Scalar x) { return -x; },
                 [](Scalar, Scalar g) { return -g; });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out(a->value.shape());
    const int n = out.size();
    for (int i = 0; i < n; ++i) out[i] = a->value[i] * b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < n; ++i) ga[i] += self.grad[i] * b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < n; ++i) gb[i] += self.grad[i] * a->value[i];
        }
    }, "mul");
}

Var scale(const Var& a, Scalar s) {
    return unary(a, "scale", [s](Scalar x) { return x * s; },
                 [s](Scalar, Scalar g) { return g * s; });
}

Var add_scalar(const Var& a, Scalar s) {
    return unary(a, "add_scalar", [s](Scalar x) { return x + s; },
                 [](Scalar, Scalar g) { return g; });
}

Var div(const Var& a, const Var& b) {
    check_same_shape(a, b, "div");
    Tensor out(a->value.shape());
    const int n = out.size();
    for (int i = 0; i < n; ++i) out[i] = a->value[i] / b->value[i];
    return make_node(std::move(out), {a, b}, [a, b](Node& self) {
        const int n = self.value.size();
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < n; ++i) ga[i] += self.grad[i] / b->value[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < n; ++i) {
                const Scalar bv = b->value[i];
                gb[i] -= self.grad[i] * a->value[i] / (bv * bv);
            }
        }
    }, "div");
}

Var leaky_relu(const Var& a, Scalar slope) {
    return unary(a, "lrelu",
                 [slope](Scalar x) { return x > 0 ? x : slope * x; },
                 [slope](Scalar x, Scalar g) { return x > 0 ? g : slope * g; });
}

Var leaky_relu_deriv(const Var& a, Scalar slope) {
    Tensor out(a->value.shape());
    const int n = out.size();
    for (int i = 0; i < n; ++i) out[i] = a->value[i] > 0 ? 1.0 : slope;
    // Piecewise-constant in the input: zero gradient almost everywhere.
    return make_node(std::move(out), {a}, [](Node&) {}, "lrelu_deriv");
}

Var sigmoid(const Var& a) {
    return unary(a, "sigmoid",
                 [](Scalar x) { return 1.0 / (1.0 + std::exp(-x)); },
                 [](Scalar x, Scalar g) {
                     const Scalar y = 1.0 / (1.0 + std::exp(-x));
                     return g * y * (1.0 - y);
                 });
}

Var tanh_op(const Var& a) {
    return unary(a, "tanh", [](Scalar x) { return std::tanh(x); },
                 [](Scalar x, Scalar g) {
                     const Scalar y = std::tanh(x);
                     return g * (1.0 - y * y);
                 });
}

Var softplus(const Var& a) {
    auto sp = [](Scalar x) {
        return x > 30.0 ? x : std::log1p(std::exp(x));
    };
    return unary(a, "softplus", sp, [](Scalar x, Scalar g) {
        return g / (1.0 + std::exp(-x));
    });
}

Var exp_op(const Var& a) {
    return unary(a, "exp", [](Scalar x) { return std::exp(x); },
                 [](Scalar x, Scalar g) { return g * std::exp(x); });
}

Var log_op(const Var& a) {
    return unary(a, "log", [](Scalar x) { return std::log(x); },
                 [](Scalar x, Scalar g) { return g / x; });
}

Var sqrt_op(const Var& a) {
    return unary(a, "sqrt", [](Scalar x) { return std::sqrt(x); },
                 [](Scalar x, Scalar g) { return g * 0.5 / std::sqrt(x); });
}

Var square(const Var& a) {
    return unary(a, "square", [](Scalar x) { return x * x; },
                 [](Scalar x, Scalar g) { return g * 2.0 * x; });
}

Var reciprocal(const Var& a) {
    return unary(a, "reciprocal", [](Scalar x) { return 1.0 / x; },
                 [](Scalar x, Scalar g) { return -g / (x * x); });
}

Var maximum_scalar(const Var& a, Scalar floor) {
    return unary(a, "max_scalar",
                 [floor](Scalar x) { return x > floor ? x : floor; },
                 [floor](Scalar x, Scalar g) { return x > floor ? g : 0.0; });
}

Var stopgrad(const Var& a) { return constant(a->value); }

Var matmul(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(1) != B.dim(0))
        throw std::runtime_error("matmul: bad shapes " + A.shape_str() + " x " + B.shape_str());
    const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const Scalar* arow = A.data() + i * k;
        Scalar* orow = out.data() + i * n;
        for (int p = 0; p < k; ++p) {
            const Scalar av = arow[p];
            if (av == 0.0) continue;
            const Scalar* brow = B.data() + p * n;
            for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return make_node(std::move(out), {a, b}, [a, b, m, k, n](Node& self) {
        const Tensor& G = self.grad;
        if (a->requires_grad) {  // dA = G * B^T
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int p = 0; p < k; ++p) {
                    Scalar acc = 0;
                    const Scalar* grow = G.data() + i * n;
                    const Scalar* brow = b->value.data() + p * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
        }
        if (b->requires_grad) {  // dB = A^T * G
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const Scalar* arow = a->value.data() + i * k;
                const Scalar* grow = G.data() + i * n;
                for (int p = 0; p < k; ++p) {
                    const Scalar av = arow[p];
                    if (av == 0.0) continue;
                    Scalar* gbrow = gb.data() + p * n;
                    for (int j = 0; j < n; ++j) gbrow[j] += av * grow[j];
                }
            }
        }
    }, "matmul");
}

Var transpose(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::runtime_error("transpose: rank != 2");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({n, m});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    return make_node(std::move(out), {a}, [a, m, n](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
    }, "transpose");
}

Var reshape(const Var& a, std::vector<int> shape) {
    Tensor out = a->value.reshaped(shape);
    return make_node(std::move(out), {a}, [a](Node& self) {
        Tensor& ga = a->ensure_grad();
        const int n = self.value.size();
        for (int i = 0; i < n; ++i) ga[i] += self.grad[i];
    }, "reshape");
}

Var slice_cols(const Var& a, int c0, int c1) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || c0 < 0 || c1 > A.dim(1) || c0 >= c1)
        throw std::runtime_error("slice_cols: bad range");
    const int m = A.dim(0), n = A.dim(1), w = c1 - c0;
    Tensor out({m, w});
    for (int i = 0; i < m; ++i)
        std::memcpy(out.data() + i * w, A.data() + i * n + c0, w * sizeof(Scalar));
    return make_node(std::move(out), {a}, [a, m, n, c0, w](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j)
                ga[i * n + c0 + j] += self.grad[i * w + j];
    }, "slice_cols");
}

Var concat_cols(const Var& a, const Var& b) {
    const Tensor& A = a->value;
    const Tensor& B = b->value;
    if (A.rank() != 2 || B.rank() != 2 || A.dim(0) != B.dim(0))
        throw std::runtime_error("concat_cols: bad shapes");
    const int m = A.dim(0), n1 = A.dim(1), n2 = B.dim(1);
    Tensor out({m, n1 + n2});
    for (int i = 0; i < m; ++i) {
        std::memcpy(out.data() + i * (n1 + n2), A.data() + i * n1, n1 * sizeof(Scalar));
        std::memcpy(out.data() + i * (n1 + n2) + n1, B.data() + i * n2, n2 * sizeof(Scalar));
    }
    return make_node(std::move(out), {a, b}, [a, b, m, n1, n2](Node& self) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n1; ++j)
                    ga[i * n1 + j] += self.grad[i * (n1 + n2) + j];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n2; ++j)
                    gb[i * n2 + j] += self.grad[i * (n1 + n2) + n1 + j];
        }
    }, "concat_cols");
}

Var get_row(const Var& a, int i) {
    const Tensor& A = a->value;
    if (A.rank() != 2 || i < 0 || i >= A.dim(0))
        throw std::runtime_error("get_row: bad index");
    const int n = A.dim(1);
    Tensor out({1, n});
    std::memcpy(out.data(), A.data() + i * n, n * sizeof(Scalar));
    return make_node(std::move(out), {a}, [a, i, n](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int j = 0; j < n; ++j) ga[i * n + j] += self.grad[j];
    }, "get_row");
}

Var stack_rows(const std::vector<Var>& rows) {
    if (rows.empty()) throw std::runtime_error("stack_rows: empty");
    const int n = rows[0]->value.size();
    const int L = static_cast<int>(rows.size());
    Tensor out({L, n});
    for (int i = 0; i < L; ++i) {
        if (rows[i]->value.size() != n)
            throw std::runtime_error("stack_rows: inconsistent widths");
        std::memcpy(out.data() + i * n, rows[i]->value.data(), n * sizeof(Scalar));
    }
    std::vector<Var> parents = rows;
    return make_node(std::move(out), parents, [parents, n](Node& self) {
        for (size_t i = 0; i < parents.size(); ++i) {
            if (!parents[i]->requires_grad) continue;
            Tensor& g = parents[i]->ensure_grad();
            for (int j = 0; j < n; ++j) g[j] += self.grad[i * n + j];
        }
    }, "stack_rows");
}

Var sum_all(const Var& a) {
    Tensor out({1});
    const int n = a->value.size();
    Scalar acc = 0;
    for (int i = 0; i < n; ++i) acc += a->value[i];
    out[0] = acc;
    return make_node(std::move(out), {a}, [a](Node& self) {
        Tensor& ga = a->ensure_grad();
        const Scalar g = self.grad[0];
        const int n = ga.size();
        for (int i = 0; i < n; ++i) ga[i] += g;
    }, "sum_all");
}

Var mean_all(const Var& a) {
    const int n = a->value.size();
    return scale(sum_all(a), 1.0 / n);
}

Var row_sum(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::runtime_error("row_sum: rank != 2");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m});
    for (int i = 0; i < m; ++i) {
        Scalar acc = 0;
        const Scalar* row = A.data() + i * n;
        for (int j = 0; j < n; ++j) acc += row[j];
        out[i] = acc;
    }
    return make_node(std::move(out), {a}, [a, m, n](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const Scalar g = self.grad[i];
            Scalar* row = ga.data() + i * n;
            for (int j = 0; j < n; ++j) row[j] += g;
        }
    }, "row_sum");
}

Var mul_colvec(const Var& a, const Var& v) {
    const Tensor& A = a->value;
    const Tensor& V = v->value;
    if (A.rank() != 2 || V.size() != A.dim(0))
        throw std::runtime_error("mul_colvec: bad shapes");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * V[i];
    return make_node(std::move(out), {a, v}, [a, v, m, n](Node& self) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[i * n + j] += self.grad[i * n + j] * v->value[i];
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int i = 0; i < m; ++i) {
                Scalar acc = 0;
                for (int j = 0; j < n; ++j)
                    acc += self.grad[i * n + j] * a->value[i * n + j];
                gv[i] += acc;
            }
        }
    }, "mul_colvec");
}

Var add_rowvec(const Var& a, const Var& v) {
    const Tensor& A = a->value;
    const Tensor& V = v->value;
    if (A.rank() != 2 || V.size() != A.dim(1))
        throw std::runtime_error("add_rowvec: bad shapes");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + V[j];
    return make_node(std::move(out), {a, v}, [a, v, m, n](Node& self) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            const int sz = m * n;
            for (int i = 0; i < sz; ++i) ga[i] += self.grad[i];
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gv[j] += self.grad[i * n + j];
        }
    }, "add_rowvec");
}

Var mul_rowvec(const Var& a, const Var& v) {
    const Tensor& A = a->value;
    const Tensor& V = v->value;
    if (A.rank() != 2 || V.size() != A.dim(1))
        throw std::runtime_error("mul_rowvec: bad shapes");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * V[j];
    return make_node(std::move(out), {a, v}, [a, v, m, n](Node& self) {
        if (a->requires_grad) {
            Tensor& ga = a->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ga[i * n + j] += self.grad[i * n + j] * v->value[j];
        }
        if (v->requires_grad) {
            Tensor& gv = v->ensure_grad();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gv[j] += self.grad[i * n + j] * a->value[i * n + j];
        }
    }, "mul_rowvec");
}

Var softmax_rows(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::runtime_error("softmax_rows: rank != 2");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        const Scalar* row = A.data() + i * n;
        Scalar mx = row[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, row[j]);
        Scalar z = 0;
        for (int j = 0; j < n; ++j) z += std::exp(row[j] - mx);
        for (int j = 0; j < n; ++j) out[i * n + j] = std::exp(row[j] - mx) / z;
    }
    return make_node(std::move(out), {a}, [a, m, n](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i) {
            const Scalar* y = self.value.data() + i * n;
            const Scalar* g = self.grad.data() + i * n;
            Scalar dot = 0;
            for (int j = 0; j < n; ++j) dot += y[j] * g[j];
            for (int j = 0; j < n; ++j) ga[i * n + j] += y[j] * (g[j] - dot);
        }
    }, "softmax_rows");
}

Var cumsum_excl_rows(const Var& a) {
    const Tensor& A = a->value;
    if (A.rank() != 2) throw std::runtime_error("cumsum_excl_rows: rank != 2");
    const int m = A.dim(0), n = A.dim(1);
    Tensor out({m, n});
    for (int i = 0; i < m; ++i) {
        Scalar acc = 0;
        for (int j = 0; j < n; ++j) {
            out[i * n + j] = acc;
            acc += A[i * n + j];
        }
    }
    return make_node(std::move(out), {a}, [a, m, n](Node& self) {
        Tensor& ga = a->ensure_grad();
        for (int i = 0; i < m; ++i) {
            Scalar acc = 0;
            for (int j = n - 1; j >= 0; --j) {
                ga[i * n + j] += acc;  // dy[j']/dx[j] = 1 for j' > j
                acc += self.grad[i * n + j];
            }
        }
    }, "cumsum_excl_rows");
}

Var conv2d(const Var& x, const Var& w, int stride, int pad) {
    const Tensor& X = x->value;
    const Tensor& W = w->value;
    if (X.rank() != 3 || W.rank() != 4 || X.dim(0) != W.dim(1))
        throw std::runtime_error("conv2d: bad shapes " + X.shape_str() + " w " + W.shape_str());
    const int Ci = X.dim(0), H = X.dim(1), Wd = X.dim(2);
    const int Co = W.dim(0), kh = W.dim(2), kw = W.dim(3);
    const int Ho = (H + 2 * pad - kh) / stride + 1;
    const int Wo = (Wd + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw std::runtime_error("conv2d: empty output");
    Tensor out({Co, Ho, Wo});
    for (int co = 0; co < Co; ++co)
        for (int oy = 0; oy < Ho; ++oy)
            for (int ox = 0; ox < Wo; ++ox) {
                Scalar acc = 0;
                for (int ci = 0; ci < Ci; ++ci)
                    for (int ky = 0; ky < kh; ++ky) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= H) continue;
                        for (int kx = 0; kx < kw; ++kx) {
                            const int ix = ox * stride + kx - pad;
                            if (ix < 0 || ix >= Wd) continue;
                            acc += X[(ci * H + iy) * Wd + ix] *
                                   W[((co * Ci + ci) * kh + ky) * kw + kx];
                        }
                    }
                out[(co * Ho + oy) * Wo + ox] = acc;
            }
    return make_node(std::move(out), {x, w},
        [x, w, stride, pad, Ci, H, Wd, Co, kh, kw, Ho, Wo](Node& self) {
            const Tensor& G = self.grad;
            Tensor* gx = x->requires_grad ? &x->ensure_grad() : nullptr;
            Tensor* gw = w->requires_grad ? &w->ensure_grad() : nullptr;
            for (int co = 0; co < Co; ++co)
                for (int oy = 0; oy < Ho; ++oy)
                    for (int ox = 0; ox < Wo; ++ox) {
                        const Scalar g = G[(co * Ho + oy) * Wo + ox];
                        if (g == 0.0) continue;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int ky = 0; ky < kh; ++ky) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= H) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= Wd) continue;
                                    const int xi = (ci * H + iy) * Wd + ix;
                                    const int wi = ((co * Ci + ci) * kh + ky) * kw + kx;
                                    if (gx) (*gx)[xi] += g * w->value[wi];
                                    if (gw) (*gw)[wi] += g * x->value[xi];
                                }
                            }
                    }
        }, "conv2d");
}

Var add_bias_chw(const Var& x, const Var& b) {
    const Tensor& X = x->value;
    const Tensor& B = b->value;
    if (X.rank() != 3 || B.size() != X.dim(0))
        throw std::runtime_error("add_bias_chw: bad shapes");
    const int C = X.dim(0), HW = X.dim(1) * X.dim(2);
    Tensor out(X.shape());
    for (int c = 0; c < C; ++c)
        for (int i = 0; i < HW; ++i) out[c * HW + i] = X[c * HW + i] + B[c];
    return make_node(std::move(out), {x, b}, [x, b, C, HW](Node& self) {
        if (x->requires_grad) {
            Tensor& gx = x->ensure_grad();
            const int n = C * HW;
            for (int i = 0; i < n; ++i) gx[i] += self.grad[i];
        }
        if (b->requires_grad) {
            Tensor& gb = b->ensure_grad();
            for (int c = 0; c < C; ++c) {
                Scalar acc = 0;
                for (int i = 0; i < HW; ++i) acc += self.grad[c * HW + i];
                gb[c] += acc;
            }
        }
    }, "add_bias_chw");
}

Var upsample2x(const Var& x) {
    const Tensor& X = x->value;
    if (X.rank() != 3) throw std::runtime_error("upsample2x: rank != 3");
    const int C = X.dim(0), H = X.dim(1), W = X.dim(2);
    Tensor out({C, 2 * H, 2 * W});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < 2 * H; ++y)
            for (int xx = 0; xx < 2 * W; ++xx)
                out[(c * 2 * H + y) * 2 * W + xx] = X[(c * H + y / 2) * W + xx / 2];
    return make_node(std::move(out), {x}, [x, C, H, W](Node& self) {
        Tensor& gx = x->ensure_grad();
        for (int c = 0; c < C; ++c)
            for (int y = 0; y < 2 * H; ++y)
                for (int xx = 0; xx < 2 * W; ++xx)
                    gx[(c * H + y / 2) * W + xx / 2] +=
                        self.grad[(c * 2 * H + y) * 2 * W + xx];
    }, "upsample2x");
}

Var global_avg_pool(const Var& x) {
    const Tensor& X = x->value;
    if (X.rank() != 3) throw std::runtime_error("global_avg_pool: rank != 3");
    const int C = X.dim(0), HW = X.dim(1) * X.dim(2);
    Tensor out({1, C});
    for (int c = 0; c < C; ++c) {
        Scalar acc = 0;
        for (int i = 0; i < HW; ++i) acc += X[c * HW + i];
        out[c] = acc / HW;
    }
    return make_node(std::move(out), {x}, [x, C, HW](Node& self) {
        Tensor& gx = x->ensure_grad();
        for (int c = 0; c < C; ++c) {
            const Scalar g = self.grad[c] / HW;
            for (int i = 0; i < HW; ++i) gx[c * HW + i] += g;
        }
    }, "global_avg_pool");
}

Var mul_weight_in(const Var& w, const Var& s) {
    const Tensor& W = w->value;
    const Tensor& S = s->value;
    if (W.rank() != 4 || S.size() != W.dim(1))
        throw std::runtime_error("mul_weight_in: bad shapes");
    const int Co = W.dim(0), Ci = W.dim(1), K = W.dim(2) * W.dim(3);
    Tensor out(W.shape());
    for (int co = 0; co < Co; ++co)
        for (int ci = 0; ci < Ci; ++ci)
            for (int k = 0; k < K; ++k)
                out[(co * Ci + ci) * K + k] = W[(co * Ci + ci) * K + k] * S[ci];
    return make_node(std::move(out), {w, s}, [w, s, Co, Ci, K](Node& self) {
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            for (int co = 0; co < Co; ++co)
                for (int ci = 0; ci < Ci; ++ci)
                    for (int k = 0; k < K; ++k)
                        gw[(co * Ci + ci) * K + k] +=
                            self.grad[(co * Ci + ci) * K + k] * s->value[ci];
        }
        if (s->requires_grad) {
            Tensor& gs = s->ensure_grad();
            for (int ci = 0; ci < Ci; ++ci) {
                Scalar acc = 0;
                for (int co = 0; co < Co; ++co)
                    for (int k = 0; k < K; ++k)
                        acc += self.grad[(co * Ci + ci) * K + k] *
                               w->value[(co * Ci + ci) * K + k];
                gs[ci] += acc;
            }
        }
    }, "mul_weight_in");
}

Var mul_weight_out(const Var& w, const Var& d) {
    const Tensor& W = w->value;
    const Tensor& D = d->value;
    if (W.rank() != 4 || D.size() != W.dim(0))
        throw std::runtime_error("mul_weight_out: bad shapes");
    const int Co = W.dim(0), CK = W.dim(1) * W.dim(2) * W.dim(3);
    Tensor out(W.shape());
    for (int co = 0; co < Co; ++co)
        for (int k = 0; k < CK; ++k) out[co * CK + k] = W[co * CK + k] * D[co];
    return make_node(std::move(out), {w, d}, [w, d, Co, CK](Node& self) {
        if (w->requires_grad) {
            Tensor& gw = w->ensure_grad();
            for (int co = 0; co < Co; ++co)
                for (int k = 0; k < CK; ++k)
                    gw[co * CK + k] += self.grad[co * CK + k] * d->value[co];
        }
        if (d->requires_grad) {
            Tensor& gd = d->ensure_grad();
            for (int co = 0; co < Co; ++co) {
                Scalar acc = 0;
                for (int k = 0; k < CK; ++k)
                    acc += self.grad[co * CK + k] * w->value[co * CK + k];
                gd[co] += acc;
            }
        }
    }, "mul_weight_out");
}

Var sum_per_out(const Var& w) {
    const Tensor& W = w->value;
    if (W.rank() != 4) throw std::runtime_error("sum_per_out: rank != 4");
    const int Co = W.dim(0), CK = W.dim(1) * W.dim(2) * W.dim(3);
    Tensor out({Co});
    for (int co = 0; co < Co; ++co) {
        Scalar acc = 0;
        for (int k = 0; k < CK; ++k) acc += W[co * CK + k];
        out[co] = acc;
    }
    return make_node(std::move(out), {w}, [w, Co, CK](Node& self) {
        Tensor& gw = w->ensure_grad();
        for (int co = 0; co < Co; ++co) {
            const Scalar g = self.grad[co];
            for (int k = 0; k < CK; ++k) gw[co * CK + k] += g;
        }
    }, "sum_per_out");
}

Var plane_sample(const Var& plane, const Tensor& gu, const Tensor& gv) {
    const Tensor& P = plane->value;
    if (P.rank() != 3 || P.dim(1) != P.dim(2))
        throw std::runtime_error("plane_sample: plane must be [C,R,R]");
    if (gu.size() != gv.size())
        throw std::runtime_error("plane_sample: coord size mismatch");
    const int C = P.dim(0), R = P.dim(1), N = gu.size();
    Tensor out({N, C});
    // Cache corner indices/weights for the backward pass.
    auto idx = std::make_shared<std::vector<int>>(N * 2);
    auto frac = std::make_shared<std::vector<Scalar>>(N * 2);
    for (int i = 0; i < N; ++i) {
        Scalar u = std::min(std::max(gu[i], 0.0), Scalar(R - 1));
        Scalar v = std::min(std::max(gv[i], 0.0), Scalar(R - 1));
        int u0 = std::min(static_cast<int>(u), R - 2);
        int v0 = std::min(static_cast<int>(v), R - 2);
        if (R == 1) { u0 = 0; v0 = 0; }
        const Scalar fu = u - u0, fv = v - v0;
        (*idx)[i * 2] = u0;
        (*idx)[i * 2 + 1] = v0;
        (*frac)[i * 2] = fu;
        (*frac)[i * 2 + 1] = fv;
        const int u1 = std::min(u0 + 1, R - 1), v1 = std::min(v0 + 1, R - 1);
        for (int c = 0; c < C; ++c) {
            const Scalar* pc = P.data() + c * R * R;
            const Scalar p00 = pc[v0 * R + u0], p01 = pc[v0 * R + u1];
            const Scalar p10 = pc[v1 * R + u0], p11 = pc[v1 * R + u1];
            out[i * C + c] = (1 - fv) * ((1 - fu) * p00 + fu * p01) +
                             fv * ((1 - fu) * p10 + fu * p11);
        }
    }
    return make_node(std::move(out), {plane}, [plane, idx, frac, C, R, N](Node& self) {
        Tensor& gp = plane->ensure_grad();
        for (int i = 0; i < N; ++i) {
            const int u0 = (*idx)[i * 2], v0 = (*idx)[i * 2 + 1];
            const int u1 = std::min(u0 + 1, R - 1), v1 = std::min(v0 + 1, R - 1);
            const Scalar fu = (*frac)[i * 2], fv = (*frac)[i * 2 + 1];
            for (int c = 0; c < C; ++c) {
                const Scalar g = self.grad[i * C + c];
                if (g == 0.0) continue;
                Scalar* gc = gp.data() + c * R * R;
                gc[v0 * R + u0] += g * (1 - fv) * (1 - fu);
                gc[v0 * R + u1] += g * (1 - fv) * fu;
                gc[v1 * R + u0] += g * fv * (1 - fu);
                gc[v1 * R + u1] += g * fv * fu;
            }
        }
    }, "plane_sample");
}

}  // namespace ops

}  // namespace tpinv
