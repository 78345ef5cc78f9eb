#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace promptseg {

// Named parameter tensor with gradient and optimizer state, owned by the
// model, referenced by tapes.
struct Param {
    std::string name;
    int rows = 0, cols = 0;
    std::vector<double> value;
    std::vector<double> grad;
    std::vector<double> m, v;    // first/second moments
    std::string group;           // parameter group for the optimizer
    int layer = 0;               // 1..L for vision backbone params, else 0

    Param() = default;
    Param(std::string n, int r, int c, std::string grp, int lyr = 0)
        : name(std::move(n)), rows(r), cols(c), value(static_cast<size_t>(r) * c, 0.0),
          grad(value.size(), 0.0), m(value.size(), 0.0), v(value.size(), 0.0),
          group(std::move(grp)), layer(lyr) {}

    size_t size() const { return value.size(); }
};

struct Var {
    int id = -1;
};

// Reverse-mode tape over row-major matrices, double precision. One tape per
// forward pass; backward() walks nodes in reverse creation order. Parameter
// leaves reference external storage and accumulate into Param::grad, so a
// batch of tapes can share one set of parameters.
class Tape {
public:
    // ---- leaves ----
    Var input(int rows, int cols, const double* data);
    Var input(int rows, int cols, std::vector<double> data);
    Var param(Param& p);

    // ---- matrix ops ----
    Var matmul(Var a, Var b);       // [N,K]x[K,M]
    Var matmul_nt(Var a, Var b);    // [N,K]x[M,K]^T
    Var linear(Var x, Var w, Var b);    // x*W + row-broadcast bias; b.id<0 skips bias
    Var add(Var a, Var b);              // same shape
    Var add_row(Var x, Var row);        // [N,D] + [1,D]
    Var mul_row(Var x, Var gate);       // [N,D] * [1,D]
    Var affine(Var x, double scale, double shift);
    Var gelu(Var x);
    Var sigmoid(Var x);
    Var softmax_rows(Var x);
    Var layernorm(Var x, Var gain, Var bias);    // row-wise, eps 1e-5
    Var gather_rows(Var x, std::vector<int> idx);
    // Treat each row of x as an [sh,sw] grid; bilinear-resample to [oh,ow].
    Var upsample_rows(Var x, int sh, int sw, int oh, int ow);
    // Rows of x are positions of a [gh,gw] grid with `cols` channels;
    // bilinear-resample positions to [oh,ow], keeping channels.
    Var upsample_grid_rows(Var x, int gh, int gw, int oh, int ow);
    // Broadcast-add a [1,1] node to every element.
    Var add_scalar(Var x, Var s);

    // ---- scalar loss heads (each returns a [1,1] node) ----
    Var focal_bce_sum(Var logits, std::vector<int> y, double alpha, double gamma);
    Var presence_bce_sum(Var logits, std::vector<int> y, double pos_weight);
    Var box_l1_sum(Var boxes, std::vector<int> rows, std::vector<std::array<double, 4>> targets);
    Var box_giou_sum(Var boxes, std::vector<int> rows,
                     std::vector<std::array<double, 4>> targets);    // sum of (1 - giou)
    Var mask_focal_mean(Var logits, std::vector<uint8_t> gt, double alpha, double gamma);
    Var mask_dice(Var logits, std::vector<uint8_t> gt, double eps);
    // BCE between max_i sigmoid(cls_i)*sigmoid(pres_i) and a {0,1} target.
    Var max_confidence_bce(Var class_logits, Var presence_logits, int target);
    // Weighted sum of scalar nodes.
    Var weighted_sum(const std::vector<std::pair<Var, double>>& terms);

    // ---- access ----
    int rows(Var v) const { return nodes_[v.id].rows; }
    int cols(Var v) const { return nodes_[v.id].cols; }
    const std::vector<double>& value(Var v) const { return nodes_[v.id].val; }
    double scalar(Var v) const { return nodes_[v.id].val[0]; }

    // Seed d(out)/d(out) = seed and propagate to all leaves.
    void backward(Var out, double seed = 1.0);

    size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        int rows = 0, cols = 0;
        std::vector<double> val;
        std::vector<double> grad;
        Param* external = nullptr;    // set for parameter leaves
        std::function<void(Tape&)> back;
    };

    int push(int rows, int cols);
    Node& node(Var v) { return nodes_[v.id]; }
    const Node& node(Var v) const { return nodes_[v.id]; }
    void check_shape(Var v, int r, int c, const char* op) const;

    std::deque<Node> nodes_;
};

} // namespace promptseg
