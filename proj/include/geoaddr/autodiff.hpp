#pragma once

#include <functional>
#include <span>
#include <vector>

#include "geoaddr/tensor.hpp"

// Reverse-mode differentiation over a linear tape. Every op records its
// output value and, when any input needs a gradient, a closure that pushes
// the output gradient back into its inputs.
namespace geoaddr::ad {

struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

class Tape {
public:
    Var constant(Tensor value);
    // Leaf over an externally owned tensor; its gradient is added into
    // `grad_sink` by backward(). A null sink makes the leaf a constant.
    Var param(const Tensor& value, Tensor* grad_sink);

    const Tensor& value(Var v) const;
    Tensor& grad(Var v);
    bool needs_grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id)].needs_grad; }

    // Seeds d(out)/d(out) = 1 for a single-element output and runs the tape backwards.
    void backward(Var out);

    Var push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor owned;
        const Tensor* ref = nullptr;
        Tensor grad;
        bool needs_grad = false;
        Tensor* sink = nullptr;
        std::function<void(Tape&)> back;
    };
    std::vector<Node> nodes_;
};

Var matmul(Tape& t, Var a, Var b);                 // [m,k] x [k,n]
Var add(Tape& t, Var a, Var b);                    // same element count
Var add_bias(Tape& t, Var x, Var bias);            // [m,n] + [n]
Var scale(Tape& t, Var x, double c);
Var layer_norm(Tape& t, Var x, Var gamma, Var beta, double eps);
Var gelu(Tape& t, Var x);                          // tanh approximation
Var gather_rows(Tape& t, Var table, std::vector<int> ids);
Var concat_rows(Tape& t, Var a, Var b);
Var slice_rows(Tape& t, Var x, std::size_t begin, std::size_t end);
Var reshape(Tape& t, Var x, std::vector<std::size_t> shape);

// Multi-head scaled dot-product attention over rows of q/k/v ([m,d]).
// Keys at index >= valid_keys are masked out. `bias` ([heads,m,m]) is
// optional and added to the scaled scores before the softmax.
Var attention(Tape& t, Var q, Var k, Var v, int heads, Var bias, std::size_t valid_keys);

// out[h,i,j] = table[index[i*m+j], h]; table is [rows, heads].
Var lookup_bias(Tape& t, Var table, std::vector<int> index, std::size_t m);
// out[h,i,j] = mean over nonzero codes c of table[c, h] along the (i,j)
// path slots; 0 when the path holds no codes.
Var route_bias(Tape& t, Var table, std::span<const std::uint8_t> codes, std::size_t m, std::size_t slots);

// Sum over rows with target >= 0 of -log softmax(logits[r])[target]. When
// candidates is non-null and candidates[r] is non-empty, the softmax runs over
// that class subset only.
Var cross_entropy_sum(Tape& t, Var logits, std::vector<int> targets,
                      const std::vector<std::vector<int>>* candidates = nullptr);

Var sum_scalars(Tape& t, std::span<const Var> parts, std::span<const double> weights);

}  // namespace geoaddr::ad
