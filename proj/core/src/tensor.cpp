#include "cirlab/tensor.hpp"

#include "cirlab/errors.hpp"
#include "cirlab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cirlab {

namespace {

std::int64_t shape_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

void check_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 3) {
        throw DimensionError("tensor rank must be 1..3, got " + shape_str(shape));
    }
    for (int e : shape) {
        if (e < 1) throw DimensionError("tensor extents must be >= 1, got " + shape_str(shape));
    }
}

constexpr float kGeluC = 0.7978845608028654f; // sqrt(2/pi)
constexpr float kGeluA = 0.044715f;

} // namespace

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    check_shape(shape);
    auto node = std::make_shared<detail::TensorNode>();
    node->value.assign(static_cast<std::size_t>(shape_numel(shape)), 0.0f);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0f);
    return Tensor(std::move(node));
}

Tensor Tensor::full(std::vector<int> shape, float v, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->value.begin(), t.node_->value.end(), v);
    return t;
}

Tensor Tensor::from_data(std::vector<int> shape, std::vector<float> data, bool requires_grad) {
    check_shape(shape);
    if (static_cast<std::int64_t>(data.size()) != shape_numel(shape)) {
        throw DimensionError("data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<detail::TensorNode>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->grad.assign(node->value.size(), 0.0f);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(float v) { return from_data({1}, {v}); }

Tensor Tensor::row(std::vector<float> data) {
    const int n = static_cast<int>(data.size());
    return from_data({1, n}, std::move(data));
}

const std::vector<int>& Tensor::shape() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->shape;
}

int Tensor::rank() const { return static_cast<int>(shape().size()); }

std::int64_t Tensor::numel() const { return shape_numel(shape()); }

int Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D: " + shape_str(shape()));
    return shape()[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D: " + shape_str(shape()));
    return shape()[1];
}

std::span<const float> Tensor::data() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->value;
}

std::span<float> Tensor::mutable_data() {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_->value;
}

bool Tensor::requires_grad() const {
    return node_ && node_->requires_grad;
}

void Tensor::set_requires_grad(bool on) {
    if (!node_) throw ContractError("use of undefined tensor");
    node_->requires_grad = on;
    if (on) {
        node_->grad.assign(node_->value.size(), 0.0f);
    } else {
        node_->grad.clear();
        node_->grad.shrink_to_fit();
    }
}

std::span<const float> Tensor::grad() const {
    if (!requires_grad()) throw ContractError("grad(): tensor does not require grad");
    return node_->grad;
}

std::span<float> Tensor::mutable_grad() {
    if (!requires_grad()) throw ContractError("grad(): tensor does not require grad");
    return node_->grad;
}

void Tensor::zero_grad() {
    if (requires_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor has " + std::to_string(numel()) + " elements");
    return node_->value[0];
}

float Tensor::at(int i) const {
    if (i < 0 || i >= numel()) throw DimensionError("at(): index out of range");
    return node_->value[static_cast<std::size_t>(i)];
}

float Tensor::at(int r, int c) const {
    const int nc = cols();
    if (r < 0 || r >= rows() || c < 0 || c >= nc) throw DimensionError("at(): index out of range");
    return node_->value[static_cast<std::size_t>(r) * nc + c];
}

Tensor Tensor::clone() const {
    if (!node_) return {};
    Tensor t = Tensor::from_data(node_->shape, node_->value, node_->requires_grad);
    return t;
}

// ---------------------------------------------------------------- Tape

Tensor Tape::make(std::vector<int> shape, bool requires_grad) {
    return Tensor::zeros(std::move(shape), requires_grad);
}

void Tape::record(std::function<void()> backward_fn) {
    ops_.push_back(std::move(backward_fn));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make({m, n}, rg);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += static_cast<double>(pa[i * k + t]) * pb[t * n + j];
            pc[i * n + j] = static_cast<float>(acc);
        }
    }
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc, m, k, n]() mutable {
            const float* go = oc.grad().data();
            if (ac.requires_grad()) {
                float* ga = ac.mutable_grad().data();
                const float* pb2 = bc.data().data();
                // dA = dC * B^T
                for (int i = 0; i < m; ++i)
                    for (int t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += static_cast<double>(go[i * n + j]) * pb2[t * n + j];
                        ga[i * k + t] += static_cast<float>(acc);
                    }
            }
            if (bc.requires_grad()) {
                float* gb = bc.mutable_grad().data();
                const float* pa2 = ac.data().data();
                // dB = A^T * dC
                for (int t = 0; t < k; ++t)
                    for (int j = 0; j < n; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < m; ++i) acc += static_cast<double>(pa2[i * k + t]) * go[i * n + j];
                        gb[t * n + j] += static_cast<float>(acc);
                    }
            }
        });
    }
    return out;
}

Tensor Tape::transpose(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = make({n, m}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, m, n]() mutable {
            const float* go = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j) gx[i * n + j] += go[j * m + i];
        });
    }
    return out;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make(a.shape(), rg);
    const auto pa = a.data();
    const auto pb = b.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] + pb[i];
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc]() mutable {
            const auto go = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.mutable_grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.mutable_grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        });
    }
    return out;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make(a.shape(), rg);
    const auto pa = a.data();
    const auto pb = b.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] - pb[i];
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc]() mutable {
            const auto go = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.mutable_grad();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.mutable_grad();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make(a.shape(), rg);
    const auto pa = a.data();
    const auto pb = b.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < pa.size(); ++i) po[i] = pa[i] * pb[i];
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc]() mutable {
            const auto go = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.mutable_grad();
                const auto pb2 = bc.data();
                for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * pb2[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.mutable_grad();
                const auto pa2 = ac.data();
                for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * pa2[i];
            }
        });
    }
    return out;
}

Tensor Tape::mul_scalar(const Tensor& x, float s) {
    Tensor out = make(x.shape(), x.requires_grad());
    const auto px = x.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < px.size(); ++i) po[i] = px[i] * s;
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, s]() mutable {
            const auto go = oc.grad();
            auto gx = xc.mutable_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * s;
        });
    }
    return out;
}

Tensor Tape::add_bias(const Tensor& x, const Tensor& bias) {
    const int m = x.rows(), n = x.cols();
    if (bias.rank() != 1 || bias.shape()[0] != n) {
        throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match columns of " +
                             shape_str(x.shape()));
    }
    const bool rg = x.requires_grad() || bias.requires_grad();
    Tensor out = make({m, n}, rg);
    const float* px = x.data().data();
    const float* pb = bias.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
    if (rg) {
        Tensor xc = x, bc = bias, oc = out;
        record([xc, bc, oc, m, n]() mutable {
            const float* go = oc.grad().data();
            if (xc.requires_grad()) {
                float* gx = xc.mutable_grad().data();
                for (int i = 0; i < m * n; ++i) gx[i] += go[i];
            }
            if (bc.requires_grad()) {
                float* gb = bc.mutable_grad().data();
                for (int j = 0; j < n; ++j) {
                    double acc = 0.0;
                    for (int i = 0; i < m; ++i) acc += go[i * n + j];
                    gb[j] += static_cast<float>(acc);
                }
            }
        });
    }
    return out;
}

Tensor Tape::gelu(const Tensor& x) {
    Tensor out = make(x.shape(), x.requires_grad());
    const auto px = x.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < px.size(); ++i) {
        const float v = px[i];
        const float u = kGeluC * (v + kGeluA * v * v * v);
        po[i] = 0.5f * v * (1.0f + std::tanh(u));
    }
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc]() mutable {
            const auto go = oc.grad();
            const auto px2 = xc.data();
            auto gx = xc.mutable_grad();
            for (std::size_t i = 0; i < go.size(); ++i) {
                const float v = px2[i];
                const float u = kGeluC * (v + kGeluA * v * v * v);
                const float t = std::tanh(u);
                const float sech2 = 1.0f - t * t;
                const float du = kGeluC * (1.0f + 3.0f * kGeluA * v * v);
                gx[i] += go[i] * (0.5f * (1.0f + t) + 0.5f * v * sech2 * du);
            }
        });
    }
    return out;
}

Tensor Tape::exp(const Tensor& x) {
    Tensor out = make(x.shape(), x.requires_grad());
    const auto px = x.data();
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < px.size(); ++i) po[i] = std::exp(px[i]);
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc]() mutable {
            const auto go = oc.grad();
            const auto pv = oc.data();
            auto gx = xc.mutable_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * pv[i];
        });
    }
    return out;
}

Tensor Tape::log(const Tensor& x) {
    const auto px = x.data();
    for (std::size_t i = 0; i < px.size(); ++i) {
        if (!(px[i] > 0.0f)) {
            throw DomainError("log: non-positive input " + std::to_string(px[i]) + " at flat index " +
                              std::to_string(i));
        }
    }
    Tensor out = make(x.shape(), x.requires_grad());
    auto po = out.mutable_data();
    for (std::size_t i = 0; i < px.size(); ++i) po[i] = std::log(px[i]);
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc]() mutable {
            const auto go = oc.grad();
            const auto px2 = xc.data();
            auto gx = xc.mutable_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / px2[i];
        });
    }
    return out;
}

Tensor Tape::concat_rows(const Tensor& a, const Tensor& b) {
    if (a.cols() != b.cols()) {
        throw DimensionError("concat_rows: column mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int ma = a.rows(), mb = b.rows(), n = a.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make({ma + mb, n}, rg);
    auto po = out.mutable_data();
    std::copy(a.data().begin(), a.data().end(), po.begin());
    std::copy(b.data().begin(), b.data().end(), po.begin() + static_cast<std::ptrdiff_t>(ma) * n);
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc, ma, mb, n]() mutable {
            const auto go = oc.grad();
            if (ac.requires_grad()) {
                auto ga = ac.mutable_grad();
                for (int i = 0; i < ma * n; ++i) ga[i] += go[i];
            }
            if (bc.requires_grad()) {
                auto gb = bc.mutable_grad();
                for (int i = 0; i < mb * n; ++i) gb[i] += go[ma * n + i];
            }
        });
    }
    return out;
}

Tensor Tape::concat_cols(const Tensor& a, const Tensor& b) {
    if (a.rows() != b.rows()) {
        throw DimensionError("concat_cols: row mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int m = a.rows(), na = a.cols(), nb = b.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make({m, na + nb}, rg);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        std::copy(pa + i * na, pa + (i + 1) * na, po + i * (na + nb));
        std::copy(pb + i * nb, pb + (i + 1) * nb, po + i * (na + nb) + na);
    }
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc, m, na, nb]() mutable {
            const float* go = oc.grad().data();
            if (ac.requires_grad()) {
                float* ga = ac.mutable_grad().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < na; ++j) ga[i * na + j] += go[i * (na + nb) + j];
            }
            if (bc.requires_grad()) {
                float* gb = bc.mutable_grad().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < nb; ++j) gb[i * nb + j] += go[i * (na + nb) + na + j];
            }
        });
    }
    return out;
}

Tensor Tape::slice_rows(const Tensor& x, int begin, int end) {
    const int m = x.rows(), n = x.cols();
    if (begin < 0 || end > m || begin >= end) {
        throw DimensionError("slice_rows: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + std::to_string(m) + " rows");
    }
    Tensor out = make({end - begin, n}, x.requires_grad());
    const float* px = x.data().data();
    std::copy(px + static_cast<std::ptrdiff_t>(begin) * n, px + static_cast<std::ptrdiff_t>(end) * n,
              out.mutable_data().data());
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, begin, n]() mutable {
            const auto go = oc.grad();
            auto gx = xc.mutable_grad();
            for (std::size_t i = 0; i < go.size(); ++i) gx[static_cast<std::size_t>(begin) * n + i] += go[i];
        });
    }
    return out;
}

Tensor Tape::slice_cols(const Tensor& x, int begin, int end) {
    const int m = x.rows(), n = x.cols();
    if (begin < 0 || end > n || begin >= end) {
        throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                             ") invalid for " + std::to_string(n) + " cols");
    }
    const int w = end - begin;
    Tensor out = make({m, w}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) std::copy(px + i * n + begin, px + i * n + end, po + i * w);
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, m, n, begin, w]() mutable {
            const float* go = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j) gx[i * n + begin + j] += go[i * w + j];
        });
    }
    return out;
}

Tensor Tape::embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    const int v = table.rows(), d = table.cols();
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw DimensionError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                                 std::to_string(v) + " rows");
        }
    }
    if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
    const int m = static_cast<int>(ids.size());
    Tensor out = make({m, d}, table.requires_grad());
    const float* pt = table.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) std::copy(pt + ids[i] * d, pt + (ids[i] + 1) * d, po + i * d);
    if (table.requires_grad()) {
        Tensor tc = table, oc = out;
        std::vector<int> idc = ids;
        record([tc, oc, idc, d]() mutable {
            const float* go = oc.grad().data();
            float* gt = tc.mutable_grad().data();
            for (std::size_t i = 0; i < idc.size(); ++i)
                for (int j = 0; j < d; ++j) gt[idc[i] * d + j] += go[i * d + j];
        });
    }
    return out;
}

Tensor Tape::l2_normalize_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = make({m, n}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    std::vector<float> norms(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(px[i * n + j]) * px[i * n + j];
        const float nrm = std::max(static_cast<float>(std::sqrt(acc)), 1e-12f);
        norms[static_cast<std::size_t>(i)] = nrm;
        for (int j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] / nrm;
    }
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, norms, m, n]() mutable {
            const float* go = oc.grad().data();
            const float* px2 = xc.data().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i) {
                const float nrm = norms[static_cast<std::size_t>(i)];
                double raw = 0.0;
                for (int j = 0; j < n; ++j) raw += static_cast<double>(px2[i * n + j]) * px2[i * n + j];
                const bool clamped = std::sqrt(raw) < 1e-12;
                if (clamped) {
                    // norm is a constant below the clamp
                    for (int j = 0; j < n; ++j) gx[i * n + j] += go[i * n + j] / nrm;
                    continue;
                }
                double dot = 0.0;
                for (int j = 0; j < n; ++j) dot += static_cast<double>(go[i * n + j]) * px2[i * n + j];
                const double n3 = static_cast<double>(nrm) * nrm * nrm;
                for (int j = 0; j < n; ++j) {
                    gx[i * n + j] += static_cast<float>(go[i * n + j] / nrm - px2[i * n + j] * dot / n3);
                }
            }
        });
    }
    return out;
}

Tensor Tape::rowwise_dot(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape() || a.rank() != 2) {
        throw DimensionError("rowwise_dot: shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
    const int m = a.rows(), n = a.cols();
    const bool rg = a.requires_grad() || b.requires_grad();
    Tensor out = make({m, 1}, rg);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += static_cast<double>(pa[i * n + j]) * pb[i * n + j];
        po[i] = static_cast<float>(acc);
    }
    if (rg) {
        Tensor ac = a, bc = b, oc = out;
        record([ac, bc, oc, m, n]() mutable {
            const float* go = oc.grad().data();
            if (ac.requires_grad()) {
                float* ga = ac.mutable_grad().data();
                const float* pb2 = bc.data().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) ga[i * n + j] += go[i] * pb2[i * n + j];
            }
            if (bc.requires_grad()) {
                float* gb = bc.mutable_grad().data();
                const float* pa2 = ac.data().data();
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < n; ++j) gb[i * n + j] += go[i] * pa2[i * n + j];
            }
        });
    }
    return out;
}

Tensor Tape::pick_per_row(const Tensor& x, const std::vector<int>& cols) {
    const int m = x.rows(), n = x.cols();
    if (static_cast<int>(cols.size()) != m) {
        throw DimensionError("pick_per_row: need " + std::to_string(m) + " column indices, got " +
                             std::to_string(cols.size()));
    }
    for (int c : cols) {
        if (c < 0 || c >= n) throw DimensionError("pick_per_row: column " + std::to_string(c) + " out of range");
    }
    Tensor out = make({m}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) po[i] = px[i * n + cols[static_cast<std::size_t>(i)]];
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        std::vector<int> cc = cols;
        record([xc, oc, cc, n]() mutable {
            const float* go = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (std::size_t i = 0; i < cc.size(); ++i) gx[i * n + cc[i]] += go[i];
        });
    }
    return out;
}

Tensor Tape::mean(const Tensor& x) {
    const std::int64_t n = x.numel();
    Tensor out = make({1}, x.requires_grad());
    const auto px = x.data();
    double acc = 0.0;
    for (float v : px) acc += v;
    out.mutable_data()[0] = static_cast<float>(acc / static_cast<double>(n));
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, n]() mutable {
            const float g = oc.grad()[0] / static_cast<float>(n);
            auto gx = xc.mutable_grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

Tensor Tape::sum(const Tensor& x) {
    Tensor out = make({1}, x.requires_grad());
    const auto px = x.data();
    double acc = 0.0;
    for (float v : px) acc += v;
    out.mutable_data()[0] = static_cast<float>(acc);
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc]() mutable {
            const float g = oc.grad()[0];
            auto gx = xc.mutable_grad();
            for (auto& v : gx) v += g;
        });
    }
    return out;
}

namespace {
// Shared softmax backward for full rows: dX = Y * (dY - sum(dY * Y)).
void softmax_row_backward(const float* y, const float* gy, float* gx, int n) {
    double dot = 0.0;
    for (int j = 0; j < n; ++j) dot += static_cast<double>(gy[j]) * y[j];
    for (int j = 0; j < n; ++j) gx[j] += y[j] * (gy[j] - static_cast<float>(dot));
}
} // namespace

Tensor Tape::softmax_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = make({m, n}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        float mx = px[i * n];
        for (int j = 1; j < n; ++j) mx = std::max(mx, px[i * n + j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) {
            const float e = std::exp(px[i * n + j] - mx);
            po[i * n + j] = e;
            denom += e;
        }
        for (int j = 0; j < n; ++j) po[i * n + j] = static_cast<float>(po[i * n + j] / denom);
    }
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, m, n]() mutable {
            const float* y = oc.data().data();
            const float* gy = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i) softmax_row_backward(y + i * n, gy + i * n, gx + i * n, n);
        });
    }
    return out;
}

Tensor Tape::log_softmax_rows(const Tensor& x) {
    const int m = x.rows(), n = x.cols();
    Tensor out = make({m, n}, x.requires_grad());
    const float* px = x.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        float mx = px[i * n];
        for (int j = 1; j < n; ++j) mx = std::max(mx, px[i * n + j]);
        double denom = 0.0;
        for (int j = 0; j < n; ++j) denom += std::exp(static_cast<double>(px[i * n + j]) - mx);
        const float lse = mx + static_cast<float>(std::log(denom));
        for (int j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] - lse;
    }
    if (x.requires_grad()) {
        Tensor xc = x, oc = out;
        record([xc, oc, m, n]() mutable {
            const float* y = oc.data().data(); // log p
            const float* gy = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i) {
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += gy[i * n + j];
                for (int j = 0; j < n; ++j) {
                    gx[i * n + j] += gy[i * n + j] - std::exp(y[i * n + j]) * static_cast<float>(gsum);
                }
            }
        });
    }
    return out;
}

Tensor Tape::causal_softmax(const Tensor& scores) {
    const int m = scores.rows(), n = scores.cols();
    if (m != n) throw DimensionError("causal_softmax: expected square matrix, got " + shape_str(scores.shape()));
    Tensor out = make({m, n}, scores.requires_grad());
    const float* px = scores.data().data();
    float* po = out.mutable_data().data();
    for (int i = 0; i < m; ++i) {
        const int w = i + 1; // visible prefix
        float mx = px[i * n];
        for (int j = 1; j < w; ++j) mx = std::max(mx, px[i * n + j]);
        double denom = 0.0;
        for (int j = 0; j < w; ++j) {
            const float e = std::exp(px[i * n + j] - mx);
            po[i * n + j] = e;
            denom += e;
        }
        for (int j = 0; j < w; ++j) po[i * n + j] = static_cast<float>(po[i * n + j] / denom);
        // columns > i stay exactly 0
    }
    if (scores.requires_grad()) {
        Tensor xc = scores, oc = out;
        record([xc, oc, m, n]() mutable {
            const float* y = oc.data().data();
            const float* gy = oc.grad().data();
            float* gx = xc.mutable_grad().data();
            for (int i = 0; i < m; ++i) {
                const int w = i + 1;
                softmax_row_backward(y + i * n, gy + i * n, gx + i * n, w);
            }
        });
    }
    return out;
}

Tensor Tape::layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (eps <= 0.0f) throw ContractError("layer_norm: eps must be positive");
    const int m = x.rows(), n = x.cols();
    if (gain.rank() != 1 || gain.shape()[0] != n || bias.rank() != 1 || bias.shape()[0] != n) {
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(n) + "]");
    }
    const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
    Tensor out = make({m, n}, rg);
    const float* px = x.data().data();
    const float* pg = gain.data().data();
    const float* pb = bias.data().data();
    float* po = out.mutable_data().data();
    std::vector<float> mu(static_cast<std::size_t>(m)), istd(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) {
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += px[i * n + j];
        const double mean = s / n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = px[i * n + j] - mean;
            var += d * d;
        }
        var /= n;
        const float is = static_cast<float>(1.0 / std::sqrt(var + eps));
        mu[static_cast<std::size_t>(i)] = static_cast<float>(mean);
        istd[static_cast<std::size_t>(i)] = is;
        for (int j = 0; j < n; ++j) {
            const float xh = (px[i * n + j] - static_cast<float>(mean)) * is;
            po[i * n + j] = xh * pg[j] + pb[j];
        }
    }
    if (rg) {
        Tensor xc = x, gc = gain, bc = bias, oc = out;
        record([xc, gc, bc, oc, mu, istd, m, n]() mutable {
            const float* px2 = xc.data().data();
            const float* pg2 = gc.data().data();
            const float* go = oc.grad().data();
            for (int i = 0; i < m; ++i) {
                const float mean = mu[static_cast<std::size_t>(i)];
                const float is = istd[static_cast<std::size_t>(i)];
                if (xc.requires_grad()) {
                    // dx = (is/n) * (n*dxh - sum(dxh) - xh * sum(dxh*xh))
                    double s1 = 0.0, s2 = 0.0;
                    for (int j = 0; j < n; ++j) {
                        const float xh = (px2[i * n + j] - mean) * is;
                        const float dxh = go[i * n + j] * pg2[j];
                        s1 += dxh;
                        s2 += static_cast<double>(dxh) * xh;
                    }
                    float* gx = xc.mutable_grad().data();
                    for (int j = 0; j < n; ++j) {
                        const float xh = (px2[i * n + j] - mean) * is;
                        const float dxh = go[i * n + j] * pg2[j];
                        gx[i * n + j] += (is / n) * (n * dxh - static_cast<float>(s1) -
                                                     xh * static_cast<float>(s2));
                    }
                }
                if (gc.requires_grad()) {
                    float* gg = gc.mutable_grad().data();
                    for (int j = 0; j < n; ++j) {
                        const float xh = (px2[i * n + j] - mean) * is;
                        gg[j] += go[i * n + j] * xh;
                    }
                }
                if (bc.requires_grad()) {
                    float* gb = bc.mutable_grad().data();
                    for (int j = 0; j < n; ++j) gb[j] += go[i * n + j];
                }
            }
        });
    }
    return out;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    if (!loss.requires_grad()) {
        throw ContractError("backward: loss does not require grad (graph not recorded on this tape)");
    }
    if (backward_done_) {
        throw ContractError("backward: tape already consumed; gradients would accumulate twice");
    }
    backward_done_ = true;
    Tensor l = loss;
    l.mutable_grad()[0] = 1.0f;
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
}

// ---------------------------------------------------- finite differences

float finite_diff_check(const TensorFn& f, Tensor x, float eps, int max_coords, std::uint64_t coord_seed) {
    if (!(eps >= 1e-5f && eps <= 1e-2f)) {
        throw ContractError("finite_diff_check: eps must lie in [1e-5, 1e-2]");
    }
    const bool was_rg = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    std::vector<float> analytic;
    {
        Tape tape;
        Tensor y = f(tape, x);
        if (y.numel() != 1) throw ContractError("finite_diff_check: f must be scalar-valued");
        tape.backward(y);
        analytic.assign(x.grad().begin(), x.grad().end());
    }

    std::vector<std::size_t> coords(static_cast<std::size_t>(x.numel()));
    std::iota(coords.begin(), coords.end(), 0u);
    if (max_coords >= 0 && static_cast<std::size_t>(max_coords) < coords.size()) {
        Rng rng(coord_seed ^ 0x5EEDC0DE5EEDC0DEULL);
        rng.shuffle(coords);
        coords.resize(static_cast<std::size_t>(max_coords));
    }

    x.set_requires_grad(false); // plain value during probing
    auto eval = [&]() -> double {
        Tape tape;
        Tensor y = f(tape, x);
        return static_cast<double>(y.item());
    };

    float max_rel = 0.0f;
    auto data = x.mutable_data();
    for (std::size_t c : coords) {
        const float saved = data[c];
        data[c] = saved + eps;
        const double fp = eval();
        data[c] = saved - eps;
        const double fm = eval();
        data[c] = saved;
        const double fd = (fp - fm) / (2.0 * static_cast<double>(eps));
        const double a = static_cast<double>(analytic[c]);
        const double denom = std::max({std::abs(a), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, static_cast<float>(std::abs(a - fd) / denom));
    }
    x.set_requires_grad(was_rg);
    return max_rel;
}

} // namespace cirlab
