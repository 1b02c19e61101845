#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "movgan/layout.hpp"
#include "movgan/tensor.hpp"

namespace movgan {

class Tape;

// Lightweight handle to a node on a tape. Cheap to copy; valid as long as
// the tape lives.
struct Var {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& value() const;
    const std::vector<int>& shape() const { return value().shape(); }
};

// Wengert-list reverse-mode tape. Nodes are appended in evaluation order,
// which is already a topological order, so backward() is a single reverse
// sweep. One tape per forward pass; parameters enter as leaves.
class Tape {
  public:
    Var leaf(Tensor value, bool requires_grad);
    Var constant(Tensor value) { return leaf(std::move(value), false); }

    const Tensor& value(Var v) const { return nodes_[static_cast<size_t>(v.id)].value; }
    bool requires_grad(Var v) const { return nodes_[static_cast<size_t>(v.id)].requires_grad; }

    // Gradient of the last backward() target w.r.t. `v`. Zero tensor if the
    // node never received a contribution.
    const Tensor& grad(Var v);

    // Seeds d(output)/d(output) = 1 (scalar outputs) and sweeps the tape.
    void backward(Var output);
    void backward(Var output, const Tensor& seed);

    // Clears gradients but keeps values, allowing a second backward from a
    // different output on the same graph.
    void zero_grad();

    size_t node_count() const { return nodes_.size(); }

    // --- used by op implementations ---
    Var make_node(Tensor value, std::vector<int> parents, std::function<void(Tape&)> backward);
    Tensor& grad_buffer(int id);
    bool has_grad(int id) const { return nodes_[static_cast<size_t>(id)].grad_live; }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool grad_live = false;
        std::function<void(Tape&)> backward;
    };
    std::vector<Node> nodes_;
};

namespace ad {

// Elementwise / scalar
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var sin_act(Var a);
Var tanh_act(Var a);
Var leaky_relu(Var a, double slope = 0.2);
Var softplus(Var a);
Var square(Var a);

// Reductions
Var sum(Var a);
Var mean(Var a);
Var dot_const(Var a, const Tensor& weights);

// Linear algebra ([R,K] x [K,C] -> [R,C])
Var matmul(Var a, Var b);
Var add_rowvec(Var x, Var v);  // [R,C] + [C]
Var mul_rowvec(Var x, Var v);  // [R,C] * [C]

// Shape
Var reshape(Var a, std::vector<int> shape);
Var concat(const std::vector<Var>& parts, int axis);
Var stack0(const std::vector<Var>& parts);  // k tensors [s...] -> [k, s...]
Var slice0(Var a, int index);               // [k, s...] -> [s...]
Var add_many(const std::vector<Var>& parts);
Var broadcast_rows(Var v, int rows);  // [C] -> [R, C]

// Conv stack ops; feature maps are [N, C, H, W]
Var conv2d(Var x, Var w, Var b, int stride, int pad);
Var upsample2x(Var x);
Var avg_pool(Var x, int k);
Var global_avg_pool(Var x);  // -> [N, C]

// Layout-aware ops
Var select_rows(Var table, std::vector<int> ids);                        // [C,E] -> [M,E]
Var rasterize(Var table, const FrameLayout& layout, int h, int w);       // -> [E,h,w]
Var stn_place(Var feature, const BoundingBox& box, int h, int w);        // [F,a,b] -> [F,h,w]
Var stn_crop(Var image, const BoundingBox& box, int out_h, int out_w);   // [F,H,W] -> [F,oh,ow]

}  // namespace ad

}  // namespace movgan
