#include "geoaddr/autodiff.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "geoaddr/errors.hpp"

namespace geoaddr {

bool Tensor::all_finite() const {
    for (double x : data)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string Tensor::shape_string() const {
    std::ostringstream ss;
    ss << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) ss << (i ? "," : "") << shape[i];
    ss << ']';
    return ss.str();
}

namespace ad {

Var Tape::constant(Tensor value) { return push(std::move(value), false, nullptr); }

Var Tape::param(const Tensor& value, Tensor* grad_sink) {
    Node n;
    n.ref = &value;
    n.needs_grad = grad_sink != nullptr;
    n.sink = grad_sink;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

Var Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.owned = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
}

const Tensor& Tape::value(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.ref ? *n.ref : n.owned;
}

Tensor& Tape::grad(Var v) {
    Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    if (n.grad.data.empty()) {
        const Tensor& val = n.ref ? *n.ref : n.owned;
        n.grad = Tensor(val.shape, 0.0);
    }
    return n.grad;
}

void Tape::backward(Var out) {
    if (value(out).size() != 1) throw DomainError("backward() needs a scalar output");
    if (!needs_grad(out)) return;
    grad(out).data[0] = 1.0;
    for (int i = out.id; i >= 0; --i) {
        Node& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.needs_grad || n.grad.data.empty()) continue;
        if (n.back) n.back(*this);
        if (n.sink) {
            if (n.sink->data.size() != n.grad.data.size()) throw DomainError("gradient sink has the wrong shape");
            for (std::size_t k = 0; k < n.grad.data.size(); ++k) n.sink->data[k] += n.grad.data[k];
        }
    }
}

namespace {

bool any_grad(Tape& t, std::initializer_list<Var> vs) {
    for (Var v : vs)
        if (v.valid() && t.needs_grad(v)) return true;
    return false;
}

void require(bool ok, const char* what) {
    if (!ok) throw DomainError(what);
}

std::size_t rows_of(const Tensor& x) { return x.shape.size() >= 1 ? x.shape[0] : 1; }

}  // namespace

Var matmul(Tape& t, Var a, Var b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    require(A.shape.size() == 2 && B.shape.size() == 2 && A.shape[1] == B.shape[0], "matmul shape mismatch");
    const std::size_t m = A.shape[0], k = A.shape[1], n = B.shape[1];
    Tensor C({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* c = C.row(i);
        const double* arow = A.row(i);
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            if (av == 0.0) continue;
            const double* brow = B.row(p);
            for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
        }
    }
    return t.push(std::move(C), any_grad(t, {a, b}), [a, b, out = Var{static_cast<int>(t.size())}, m, k, n](Tape& tp) {
        const Tensor& dC = tp.grad(out);
        const Tensor& A = tp.value(a);
        const Tensor& B = tp.value(b);
        if (tp.needs_grad(a)) {
            Tensor& dA = tp.grad(a);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    const double* dc = dC.row(i);
                    const double* brow = B.row(p);
                    for (std::size_t j = 0; j < n; ++j) s += dc[j] * brow[j];
                    dA(i, p) += s;
                }
        }
        if (tp.needs_grad(b)) {
            Tensor& dB = tp.grad(b);
            for (std::size_t i = 0; i < m; ++i) {
                const double* dc = dC.row(i);
                const double* arow = A.row(i);
                for (std::size_t p = 0; p < k; ++p) {
                    const double av = arow[p];
                    if (av == 0.0) continue;
                    double* db = dB.row(p);
                    for (std::size_t j = 0; j < n; ++j) db[j] += av * dc[j];
                }
            }
        }
    });
}

Var add(Tape& t, Var a, Var b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    require(A.size() == B.size(), "add size mismatch");
    Tensor C = A;
    for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(C), any_grad(t, {a, b}), [a, b, out](Tape& tp) {
        const Tensor& d = tp.grad(out);
        for (Var v : {a, b}) {
            if (!tp.needs_grad(v)) continue;
            Tensor& g = tp.grad(v);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d.data[i];
        }
    });
}

Var add_bias(Tape& t, Var x, Var bias) {
    const Tensor& X = t.value(x);
    const Tensor& B = t.value(bias);
    const std::size_t m = rows_of(X), n = X.cols();
    require(B.size() == n, "bias size mismatch");
    Tensor Y = X;
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) Y(i, j) += B.data[j];
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x, bias}), [x, bias, out, m, n](Tape& tp) {
        const Tensor& d = tp.grad(out);
        if (tp.needs_grad(x)) {
            Tensor& g = tp.grad(x);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d.data[i];
        }
        if (tp.needs_grad(bias)) {
            Tensor& g = tp.grad(bias);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) g.data[j] += d(i, j);
        }
    });
}

Var scale(Tape& t, Var x, double c) {
    Tensor Y = t.value(x);
    for (double& v : Y.data) v *= c;
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x}), [x, out, c](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += c * d.data[i];
    });
}

Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps) {
    const Tensor& X = t.value(x);
    const Tensor& G = t.value(gamma);
    const Tensor& B = t.value(beta);
    const std::size_t m = rows_of(X), n = X.cols();
    require(G.size() == n && B.size() == n, "layer_norm parameter size mismatch");
    Tensor Y({m, n});
    Tensor xhat({m, n});
    std::vector<double> inv_std(m);
    for (std::size_t i = 0; i < m; ++i) {
        const double* r = X.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < n; ++j) mean += r[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (r[j] - mean) * (r[j] - mean);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (std::size_t j = 0; j < n; ++j) {
            xhat(i, j) = (r[j] - mean) * inv_std[i];
            Y(i, j) = xhat(i, j) * G.data[j] + B.data[j];
        }
    }
    Y.shape = X.shape;
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x, gamma, beta}),
                  [x, gamma, beta, out, m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp) {
                      const Tensor& d = tp.grad(out);
                      const Tensor& G = tp.value(gamma);
                      if (tp.needs_grad(gamma) || tp.needs_grad(beta)) {
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) {
                                  if (tp.needs_grad(gamma)) tp.grad(gamma).data[j] += d(i, j) * xhat(i, j);
                                  if (tp.needs_grad(beta)) tp.grad(beta).data[j] += d(i, j);
                              }
                      }
                      if (!tp.needs_grad(x)) return;
                      Tensor& g = tp.grad(x);
                      std::vector<double> dxhat(n);
                      for (std::size_t i = 0; i < m; ++i) {
                          double mean_d = 0.0, mean_dx = 0.0;
                          for (std::size_t j = 0; j < n; ++j) {
                              dxhat[j] = d(i, j) * G.data[j];
                              mean_d += dxhat[j];
                              mean_dx += dxhat[j] * xhat(i, j);
                          }
                          mean_d /= static_cast<double>(n);
                          mean_dx /= static_cast<double>(n);
                          for (std::size_t j = 0; j < n; ++j)
                              g(i, j) += inv_std[i] * (dxhat[j] - mean_d - xhat(i, j) * mean_dx);
                      }
                  });
}

Var gelu(Tape& t, Var x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    const Tensor& X = t.value(x);
    Tensor Y = X;
    for (double& v : Y.data) {
        const double u = kC * (v + kA * v * v * v);
        v = 0.5 * v * (1.0 + std::tanh(u));
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x}), [x, out](Tape& tp) {
        const Tensor& X = tp.value(x);
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = X.data[i];
            const double th = std::tanh(kC * (v + kA * v * v * v));
            const double dudv = kC * (1.0 + 3.0 * kA * v * v);
            g.data[i] += d.data[i] * (0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * dudv);
        }
    });
}

Var gather_rows(Tape& t, Var table, std::vector<int> ids) {
    const Tensor& T = t.value(table);
    const std::size_t rows = rows_of(T), n = T.cols();
    Tensor Y({ids.size(), n});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < rows, "gather index out of range");
        std::copy_n(T.row(static_cast<std::size_t>(ids[i])), n, Y.row(i));
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {table}), [table, out, n, ids = std::move(ids)](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(table);
        for (std::size_t i = 0; i < ids.size(); ++i) {
            double* gr = g.row(static_cast<std::size_t>(ids[i]));
            const double* dr = d.row(i);
            for (std::size_t j = 0; j < n; ++j) gr[j] += dr[j];
        }
    });
}

Var concat_rows(Tape& t, Var a, Var b) {
    const Tensor& A = t.value(a);
    const Tensor& B = t.value(b);
    require(A.cols() == B.cols(), "concat_rows width mismatch");
    const std::size_t ma = rows_of(A), mb = rows_of(B), n = A.cols();
    Tensor Y({ma + mb, n});
    std::copy(A.data.begin(), A.data.end(), Y.data.begin());
    std::copy(B.data.begin(), B.data.end(), Y.data.begin() + static_cast<std::ptrdiff_t>(ma * n));
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {a, b}), [a, b, out, ma, n](Tape& tp) {
        const Tensor& d = tp.grad(out);
        if (tp.needs_grad(a)) {
            Tensor& g = tp.grad(a);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d.data[i];
        }
        if (tp.needs_grad(b)) {
            Tensor& g = tp.grad(b);
            for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d.data[ma * n + i];
        }
    });
}

Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end) {
    const Tensor& X = t.value(x);
    require(begin <= end && end <= rows_of(X), "slice_rows out of range");
    const std::size_t n = X.cols();
    Tensor Y({end - begin, n});
    std::copy(X.data.begin() + static_cast<std::ptrdiff_t>(begin * n),
              X.data.begin() + static_cast<std::ptrdiff_t>(end * n), Y.data.begin());
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x}), [x, out, begin, n](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(x);
        for (std::size_t i = 0; i < d.size(); ++i) g.data[begin * n + i] += d.data[i];
    });
}

Var reshape(Tape& t, Var x, std::vector<std::size_t> shape) {
    Tensor Y = t.value(x);
    require(Tensor::numel(shape) == Y.size(), "reshape size mismatch");
    Y.shape = std::move(shape);
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {x}), [x, out](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(x);
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += d.data[i];
    });
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, Var bias, std::size_t valid_keys) {
    const Tensor& Q = t.value(q);
    const Tensor& K = t.value(k);
    const Tensor& V = t.value(v);
    const std::size_t m = rows_of(Q), d = Q.cols();
    require(heads > 0 && d % static_cast<std::size_t>(heads) == 0, "model width not divisible by head count");
    require(rows_of(K) == m && rows_of(V) == m && K.cols() == d && V.cols() == d, "attention shape mismatch");
    require(valid_keys >= 1 && valid_keys <= m, "attention needs at least one valid key");
    const auto H = static_cast<std::size_t>(heads);
    const std::size_t dh = d / H;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    if (bias.valid()) require(t.value(bias).size() == H * m * m, "attention bias shape mismatch");
    const Tensor* Bt = bias.valid() ? &t.value(bias) : nullptr;

    Tensor P({H, m, m});  // softmax weights; masked keys stay 0
    Tensor O({m, d});
    std::vector<double> s(m);
    for (std::size_t h = 0; h < H; ++h) {
        for (std::size_t i = 0; i < m; ++i) {
            double mx = -std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < valid_keys; ++j) {
                double acc = 0.0;
                for (std::size_t c = 0; c < dh; ++c) acc += Q(i, h * dh + c) * K(j, h * dh + c);
                acc *= sc;
                if (Bt) acc += Bt->data[(h * m + i) * m + j];
                s[j] = acc;
                mx = std::max(mx, acc);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < valid_keys; ++j) {
                s[j] = std::exp(s[j] - mx);
                z += s[j];
            }
            double* prow = &P.data[(h * m + i) * m];
            for (std::size_t j = 0; j < valid_keys; ++j) prow[j] = s[j] / z;
            for (std::size_t j = 0; j < valid_keys; ++j) {
                const double w = prow[j];
                for (std::size_t c = 0; c < dh; ++c) O(i, h * dh + c) += w * V(j, h * dh + c);
            }
        }
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(O), any_grad(t, {q, k, v, bias}),
                  [q, k, v, bias, out, H, m, dh, d, sc, valid_keys, P = std::move(P)](Tape& tp) {
                      const Tensor& dO = tp.grad(out);
                      const Tensor& Q = tp.value(q);
                      const Tensor& K = tp.value(k);
                      const Tensor& V = tp.value(v);
                      Tensor* dQ = tp.needs_grad(q) ? &tp.grad(q) : nullptr;
                      Tensor* dK = tp.needs_grad(k) ? &tp.grad(k) : nullptr;
                      Tensor* dV = tp.needs_grad(v) ? &tp.grad(v) : nullptr;
                      Tensor* dB = bias.valid() && tp.needs_grad(bias) ? &tp.grad(bias) : nullptr;
                      std::vector<double> dp(valid_keys);
                      for (std::size_t h = 0; h < H; ++h) {
                          for (std::size_t i = 0; i < m; ++i) {
                              const double* prow = &P.data[(h * m + i) * m];
                              double dot = 0.0;
                              for (std::size_t j = 0; j < valid_keys; ++j) {
                                  double acc = 0.0;
                                  for (std::size_t c = 0; c < dh; ++c) acc += dO(i, h * dh + c) * V(j, h * dh + c);
                                  dp[j] = acc;
                                  dot += prow[j] * acc;
                                  if (dV)
                                      for (std::size_t c = 0; c < dh; ++c) (*dV)(j, h * dh + c) += prow[j] * dO(i, h * dh + c);
                              }
                              for (std::size_t j = 0; j < valid_keys; ++j) {
                                  const double ds = prow[j] * (dp[j] - dot);
                                  if (dB) dB->data[(h * m + i) * m + j] += ds;
                                  if (dQ)
                                      for (std::size_t c = 0; c < dh; ++c) (*dQ)(i, h * dh + c) += sc * ds * K(j, h * dh + c);
                                  if (dK)
                                      for (std::size_t c = 0; c < dh; ++c) (*dK)(j, h * dh + c) += sc * ds * Q(i, h * dh + c);
                              }
                          }
                      }
                      (void)d;
                  });
}

Var lookup_bias(Tape& t, Var table, std::vector<int> index, std::size_t m) {
    const Tensor& T = t.value(table);
    const std::size_t rows = rows_of(T), H = T.cols();
    require(index.size() == m * m, "lookup_bias index size mismatch");
    Tensor Y({H, m, m});
    for (std::size_t p = 0; p < m * m; ++p) {
        require(index[p] >= 0 && static_cast<std::size_t>(index[p]) < rows, "lookup_bias index out of range");
        for (std::size_t h = 0; h < H; ++h) Y.data[h * m * m + p] = T(static_cast<std::size_t>(index[p]), h);
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {table}), [table, out, H, m, index = std::move(index)](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(table);
        for (std::size_t p = 0; p < m * m; ++p)
            for (std::size_t h = 0; h < H; ++h) g(static_cast<std::size_t>(index[p]), h) += d.data[h * m * m + p];
    });
}

Var route_bias(Tape& t, Var table, std::span<const std::uint8_t> codes, std::size_t m, std::size_t slots) {
    const Tensor& T = t.value(table);
    const std::size_t rows = rows_of(T), H = T.cols();
    require(codes.size() == m * m * slots, "route_bias code size mismatch");
    std::vector<std::uint8_t> c(codes.begin(), codes.end());
    Tensor Y({H, m, m});
    for (std::size_t p = 0; p < m * m; ++p) {
        std::size_t count = 0;
        for (std::size_t s = 0; s < slots; ++s) {
            const auto code = c[p * slots + s];
            if (code == 0) continue;
            require(code < rows, "route code outside table");
            ++count;
            for (std::size_t h = 0; h < H; ++h) Y.data[h * m * m + p] += T(code, h);
        }
        if (count > 1)
            for (std::size_t h = 0; h < H; ++h) Y.data[h * m * m + p] /= static_cast<double>(count);
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(std::move(Y), any_grad(t, {table}), [table, out, H, m, slots, c = std::move(c)](Tape& tp) {
        const Tensor& d = tp.grad(out);
        Tensor& g = tp.grad(table);
        for (std::size_t p = 0; p < m * m; ++p) {
            std::size_t count = 0;
            for (std::size_t s = 0; s < slots; ++s) count += c[p * slots + s] != 0;
            if (count == 0) continue;
            const double w = 1.0 / static_cast<double>(count);
            for (std::size_t s = 0; s < slots; ++s) {
                const auto code = c[p * slots + s];
                if (code == 0) continue;
                for (std::size_t h = 0; h < H; ++h) g(code, h) += w * d.data[h * m * m + p];
            }
        }
    });
}

Var cross_entropy_sum(Tape& t, Var logits, std::vector<int> targets, const std::vector<std::vector<int>>* candidates) {
    const Tensor& L = t.value(logits);
    const std::size_t r = rows_of(L), C = L.cols();
    require(targets.size() == r, "cross_entropy target count mismatch");
    std::vector<std::vector<int>> cands;
    if (candidates) {
        require(candidates->size() == r, "cross_entropy candidate count mismatch");
        cands = *candidates;
    } else {
        cands.resize(r);
    }
    Tensor probs({r, C});  // softmax restricted to the candidate set
    double total = 0.0;
    for (std::size_t i = 0; i < r; ++i) {
        if (targets[i] < 0) continue;
        require(static_cast<std::size_t>(targets[i]) < C, "cross_entropy target out of range");
        auto& cs = cands[i];
        if (cs.empty()) {
            cs.resize(C);
            for (std::size_t c = 0; c < C; ++c) cs[c] = static_cast<int>(c);
        }
        require(std::find(cs.begin(), cs.end(), targets[i]) != cs.end(), "cross_entropy target outside candidates");
        double mx = -std::numeric_limits<double>::infinity();
        for (int c : cs) mx = std::max(mx, L(i, static_cast<std::size_t>(c)));
        double z = 0.0;
        for (int c : cs) z += std::exp(L(i, static_cast<std::size_t>(c)) - mx);
        const double lse = mx + std::log(z);
        total += lse - L(i, static_cast<std::size_t>(targets[i]));
        for (int c : cs) probs(i, static_cast<std::size_t>(c)) = std::exp(L(i, static_cast<std::size_t>(c)) - lse);
    }
    const Var out{static_cast<int>(t.size())};
    return t.push(Tensor({1}, total), any_grad(t, {logits}),
                  [logits, out, r, targets = std::move(targets), cands = std::move(cands), probs = std::move(probs)](Tape& tp) {
                      const double d = tp.grad(out).data[0];
                      Tensor& g = tp.grad(logits);
                      for (std::size_t i = 0; i < r; ++i) {
                          if (targets[i] < 0) continue;
                          for (int c : cands[i]) g(i, static_cast<std::size_t>(c)) += d * probs(i, static_cast<std::size_t>(c));
                          g(i, static_cast<std::size_t>(targets[i])) -= d;
                      }
                  });
}

Var sum_scalars(Tape& t, std::span<const Var> parts, std::span<const double> weights) {
    require(parts.size() == weights.size(), "sum_scalars weight count mismatch");
    double total = 0.0;
    bool grad = false;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        total += weights[i] * t.value(parts[i]).data.at(0);
        grad = grad || t.needs_grad(parts[i]);
    }
    const Var out{static_cast<int>(t.size())};
    std::vector<Var> ps(parts.begin(), parts.end());
    std::vector<double> ws(weights.begin(), weights.end());
    return t.push(Tensor({1}, total), grad, [ps = std::move(ps), ws = std::move(ws), out](Tape& tp) {
        const double d = tp.grad(out).data[0];
        for (std::size_t i = 0; i < ps.size(); ++i)
            if (tp.needs_grad(ps[i])) tp.grad(ps[i]).data[0] += ws[i] * d;
    });
}

}  // namespace ad
}  // namespace geoaddr
