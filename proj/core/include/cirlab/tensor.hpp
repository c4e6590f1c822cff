#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cirlab {

namespace detail {
struct TensorNode {
    std::vector<int> shape;   // rank 1..3, extents >= 1
    std::vector<float> value; // flat row-major
    std::vector<float> grad;  // same length as value iff requires_grad
    bool requires_grad = false;
};
} // namespace detail

// Dense f32 tensor, rank <= 3, row-major. Copies share storage; gradients
// live next to the values and are populated by Tape::backward. A tensor not
// fed through a Tape is a plain immutable value and is safe to share
// read-only across threads.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, float v, bool requires_grad = false);
    static Tensor from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad = false);
    static Tensor scalar(float v);
    static Tensor row(std::vector<float> data); // shape [1 x n]

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const;
    int rank() const;
    std::int64_t numel() const;
    // 2-D accessors; DimensionError when rank != 2
    int rows() const;
    int cols() const;

    std::span<const float> data() const;
    std::span<float> mutable_data();
    bool requires_grad() const;
    void set_requires_grad(bool on);
    // grad access; ContractError when requires_grad is off
    std::span<const float> grad() const;
    std::span<float> mutable_grad();
    void zero_grad();

    float item() const; // value of a single-element tensor
    float at(int i) const;
    float at(int r, int c) const;

    Tensor clone() const; // deep copy (values only; grad buffer fresh)

private:
    explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<detail::TensorNode> node_;
    friend class Tape;
};

// Records one forward computation as an ordered op list; backward replays the
// list in exact reverse order, accumulating into the grad buffers of every
// tensor with requires_grad. Single-threaded; one backward per tape.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // --- linear algebra ---
    Tensor matmul(const Tensor& a, const Tensor& b);
    Tensor transpose(const Tensor& x);

    // --- elementwise / shape suite ---
    Tensor add(const Tensor& a, const Tensor& b);
    Tensor sub(const Tensor& a, const Tensor& b);
    Tensor mul(const Tensor& a, const Tensor& b);
    Tensor mul_scalar(const Tensor& x, float s);
    Tensor add_bias(const Tensor& x, const Tensor& bias); // bias[n] added to every row
    Tensor gelu(const Tensor& x);                         // tanh approximation
    Tensor exp(const Tensor& x);
    Tensor log(const Tensor& x);
    Tensor concat_rows(const Tensor& a, const Tensor& b);
    Tensor concat_cols(const Tensor& a, const Tensor& b);
    Tensor slice_rows(const Tensor& x, int begin, int end);
    Tensor slice_cols(const Tensor& x, int begin, int end);
    Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids);
    Tensor l2_normalize_rows(const Tensor& x); // row / max(||row||, 1e-12)
    Tensor rowwise_dot(const Tensor& a, const Tensor& b); // [m x n],[m x n] -> [m x 1]
    Tensor pick_per_row(const Tensor& x, const std::vector<int>& cols); // out[k] = x[k][cols[k]]

    // --- reductions ---
    Tensor mean(const Tensor& x); // scalar
    Tensor sum(const Tensor& x);  // scalar

    // --- normalizations ---
    Tensor softmax_rows(const Tensor& x); // stable, rows sum to 1
    Tensor log_softmax_rows(const Tensor& x);
    // Row i is a softmax over columns 0..i; columns > i are exactly zero,
    // so positions after i cannot influence earlier outputs even in f32.
    Tensor causal_softmax(const Tensor& scores); // [L x L]
    Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);

    // Populates grads of every requires_grad tensor reachable from loss.
    // loss must be scalar; a second call on the same tape is an error.
    void backward(const Tensor& loss);

    std::size_t num_ops() const { return ops_.size(); }

private:
    Tensor make(std::vector<int> shape, bool requires_grad);
    void record(std::function<void()> backward_fn);

    std::vector<std::function<void()>> ops_;
    bool backward_done_ = false;
};

// Max over checked coordinates of |analytic - central difference| /
// max(|analytic|, |difference|, 1e-8). f must build a scalar from x on the
// given tape. eps must lie in [1e-5, 1e-2]. When max_coords >= 0, a random
// subset of coordinates (seeded by coord_seed) is checked instead of all.
using TensorFn = std::function<Tensor(Tape&, Tensor&)>;
float finite_diff_check(const TensorFn& f, Tensor x, float eps,
                        int max_coords = -1, std::uint64_t coord_seed = 0);

} // namespace cirlab
