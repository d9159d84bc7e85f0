#include "prosoclap/autograd.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace prosoclap::ag {

namespace {

thread_local bool g_grad_enabled = true;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::scalar(double v, bool requires_grad) {
    Matrix m(1, 1);
    m(0, 0) = v;
    return Var(std::move(m), requires_grad);
}

void Var::backward() const {
    require(rows() == 1 && cols() == 1, "backward() needs a scalar");
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    // Iterative post-order DFS.
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            Node* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    node_->accumulate(Matrix::Ones(1, 1));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->grad.size() != 0) n->backward(*n);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out;
    out.node_ = std::make_shared<Node>();
    out.node_->value = std::move(value);
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (auto& in : inputs) out.node_->inputs.push_back(in.node());
    out.node_->backward = std::move(backward);
    return out;
}

namespace {

Node& in(Node& n, std::size_t i) { return *n.inputs[i]; }

}  // namespace

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: shape mismatch");
    return make_result(a.value() * b.value(), {a, b}, [](Node& n) {
        Node& a = in(n, 0);
        Node& b = in(n, 1);
        if (a.requires_grad) a.accumulate(n.grad * b.value.transpose());
        if (b.requires_grad) b.accumulate(a.value.transpose() * n.grad);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "matmul_nt: shape mismatch");
    return make_result(a.value() * b.value().transpose(), {a, b}, [](Node& n) {
        Node& a = in(n, 0);
        Node& b = in(n, 1);
        if (a.requires_grad) a.accumulate(n.grad * b.value);
        if (b.requires_grad) b.accumulate(n.grad.transpose() * a.value);
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    return make_result(a.value() + b.value(), {a, b}, [](Node& n) {
        if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
        if (in(n, 1).requires_grad) in(n, 1).accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    return make_result(a.value() - b.value(), {a, b}, [](Node& n) {
        if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
        if (in(n, 1).requires_grad) in(n, 1).accumulate(-n.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& n) {
        Node& a = in(n, 0);
        Node& b = in(n, 1);
        if (a.requires_grad) a.accumulate(n.grad.cwiseProduct(b.value));
        if (b.requires_grad) b.accumulate(n.grad.cwiseProduct(a.value));
    });
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: shape mismatch");
    Matrix out = a.value().rowwise() + row.value().row(0);
    return make_result(std::move(out), {a, row}, [](Node& n) {
        if (in(n, 0).requires_grad) in(n, 0).accumulate(n.grad);
        if (in(n, 1).requires_grad) in(n, 1).accumulate(n.grad.colwise().sum());
    });
}

Var scale(const Var& a, double s) {
    return make_result(a.value() * s, {a}, [s](Node& n) { in(n, 0).accumulate(n.grad * s); });
}

Var scale_by(const Var& a, const Var& s) {
    require(s.rows() == 1 && s.cols() == 1, "scale_by: scalar expected");
    return make_result(a.value() * s.item(), {a, s}, [](Node& n) {
        Node& a = in(n, 0);
        Node& s = in(n, 1);
        if (a.requires_grad) a.accumulate(n.grad * s.value(0, 0));
        if (s.requires_grad) {
            Matrix g(1, 1);
            g(0, 0) = n.grad.cwiseProduct(a.value).sum();
            s.accumulate(g);
        }
    });
}

Var mul_rows(const Var& a, std::span<const double> row_weights) {
    require(static_cast<Index>(row_weights.size()) == a.rows(), "mul_rows: size mismatch");
    Eigen::Map<const Eigen::VectorXd> w(row_weights.data(), a.rows());
    Eigen::VectorXd weights = w;
    Matrix out = weights.asDiagonal() * a.value();
    return make_result(std::move(out), {a}, [weights](Node& n) {
        in(n, 0).accumulate(weights.asDiagonal() * n.grad);
    });
}

Var exp(const Var& a) {
    Matrix out = a.value().array().exp().matrix();
    return make_result(out, {a}, [](Node& n) { in(n, 0).accumulate(n.grad.cwiseProduct(n.value)); });
}

Var relu(const Var& a) {
    Matrix out = a.value().cwiseMax(0.0);
    return make_result(std::move(out), {a}, [](Node& n) {
        Matrix g = (in(n, 0).value.array() > 0.0).select(n.grad, 0.0);
        in(n, 0).accumulate(g);
    });
}

namespace {
constexpr double kSqrt2OverPi = 0.7978845608028654;
constexpr double kGeluCoeff = 0.044715;
}  // namespace

Var gelu(const Var& a) {
    const auto& x = a.value().array();
    Matrix out = (0.5 * x * (1.0 + (kSqrt2OverPi * (x + kGeluCoeff * x.cube())).tanh())).matrix();
    return make_result(std::move(out), {a}, [](Node& n) {
        const auto x = in(n, 0).value.array();
        const auto u = kSqrt2OverPi * (x + kGeluCoeff * x.cube());
        const Eigen::ArrayXXd t = u.tanh();
        const auto du = kSqrt2OverPi * (1.0 + 3.0 * kGeluCoeff * x.square());
        Eigen::ArrayXXd d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t.square()) * du;
        in(n, 0).accumulate((n.grad.array() * d).matrix());
    });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
    if (p <= 0.0) return a;
    std::bernoulli_distribution keep(1.0 - p);
    Matrix mask(a.rows(), a.cols());
    const double s = 1.0 / (1.0 - p);
    for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
    Matrix out = a.value().cwiseProduct(mask);
    return make_result(std::move(out), {a}, [mask](Node& n) { in(n, 0).accumulate(n.grad.cwiseProduct(mask)); });
}

Var sum(const Var& a) {
    Matrix out(1, 1);
    out(0, 0) = a.value().sum();
    return make_result(std::move(out), {a}, [](Node& n) {
        const Node& x = in(n, 0);
        in(n, 0).accumulate(Matrix::Constant(x.value.rows(), x.value.cols(), n.grad(0, 0)));
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

Var mean_rows(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a.rows());
    Matrix out = a.value().colwise().sum() * inv;
    return make_result(std::move(out), {a}, [inv](Node& n) {
        const Index r = in(n, 0).value.rows();
        in(n, 0).accumulate(n.grad.replicate(r, 1) * inv);
    });
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
    const Index rows = x.rows();
    const Index cols = x.cols();
    require(gain.rows() == 1 && gain.cols() == cols && bias.rows() == 1 && bias.cols() == cols,
            "layer_norm: parameter shape mismatch");
    Matrix xhat(rows, cols);
    Eigen::VectorXd inv_std(rows);
    for (Index r = 0; r < rows; ++r) {
        const auto row = x.value().row(r);
        const double mu = row.mean();
        const double var = (row.array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (row.array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
    out.rowwise() += bias.value().row(0);
    return make_result(std::move(out), {x, gain, bias}, [xhat, inv_std](Node& n) {
        Node& x = in(n, 0);
        Node& g = in(n, 1);
        Node& b = in(n, 2);
        if (g.requires_grad) g.accumulate(n.grad.cwiseProduct(xhat).colwise().sum());
        if (b.requires_grad) b.accumulate(n.grad.colwise().sum());
        if (x.requires_grad) {
            const Index cols = xhat.cols();
            Matrix dxhat = (n.grad.array().rowwise() * g.value.row(0).array()).matrix();
            Matrix dx(xhat.rows(), cols);
            for (Index r = 0; r < xhat.rows(); ++r) {
                const double m1 = dxhat.row(r).mean();
                const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                dx.row(r) = inv_std(r) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
            }
            x.accumulate(dx);
        }
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    Eigen::VectorXd norms = x.value().rowwise().norm().cwiseMax(eps);
    Matrix out = norms.cwiseInverse().asDiagonal() * x.value();
    return make_result(out, {x}, [norms](Node& n) {
        // d/dx (x/|x|) = (I - y y^T) / |x|
        Matrix g(n.value.rows(), n.value.cols());
        for (Index r = 0; r < g.rows(); ++r) {
            const double proj = n.grad.row(r).dot(n.value.row(r));
            g.row(r) = (n.grad.row(r) - proj * n.value.row(r)) / norms(r);
        }
        in(n, 0).accumulate(g);
    });
}

Var softmax_rows(const Var& x, std::span<const std::uint8_t> key_mask) {
    const Index cols = x.cols();
    require(key_mask.empty() || static_cast<Index>(key_mask.size()) == cols, "softmax_rows: mask size");
    Matrix p(x.rows(), cols);
    for (Index r = 0; r < x.rows(); ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Index c = 0; c < cols; ++c)
            if (key_mask.empty() || key_mask[c]) mx = std::max(mx, x.value()(r, c));
        double z = 0.0;
        for (Index c = 0; c < cols; ++c) {
            const double e = (key_mask.empty() || key_mask[c]) ? std::exp(x.value()(r, c) - mx) : 0.0;
            p(r, c) = e;
            z += e;
        }
        p.row(r) /= z;
    }
    return make_result(p, {x}, [](Node& n) {
        Matrix g(n.value.rows(), n.value.cols());
        for (Index r = 0; r < g.rows(); ++r) {
            const double dot = n.grad.row(r).dot(n.value.row(r));
            g.row(r) = n.value.row(r).cwiseProduct((n.grad.row(r).array() - dot).matrix());
        }
        in(n, 0).accumulate(g);
    });
}

Var gather_rows(const Var& x, std::span<const int> rows) {
    Matrix out(static_cast<Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < x.rows(), "gather_rows: index out of range");
        out.row(static_cast<Index>(i)) = x.value().row(rows[i]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return make_result(std::move(out), {x}, [idx](Node& n) {
        Node& x = in(n, 0);
        Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += n.grad.row(static_cast<Index>(i));
        x.accumulate(g);
    });
}

Var segment_mean(const Var& x, std::span<const int> segment_of_row, int segments) {
    require(static_cast<Index>(segment_of_row.size()) == x.rows(), "segment_mean: size mismatch");
    std::vector<int> seg(segment_of_row.begin(), segment_of_row.end());
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(segments);
    Matrix out = Matrix::Zero(segments, x.cols());
    // Running mean: a segment of identical rows reproduces the row exactly.
    for (std::size_t i = 0; i < seg.size(); ++i) {
        require(seg[i] >= 0 && seg[i] < segments, "segment_mean: segment out of range");
        counts(seg[i]) += 1.0;
        out.row(seg[i]) += (x.value().row(static_cast<Index>(i)) - out.row(seg[i])) / counts(seg[i]);
    }
    for (int s = 0; s < segments; ++s) require(counts(s) > 0.0, "segment_mean: empty segment");
    return make_result(std::move(out), {x}, [seg, counts](Node& n) {
        Node& x = in(n, 0);
        Matrix g(x.value.rows(), x.value.cols());
        for (std::size_t i = 0; i < seg.size(); ++i)
            g.row(static_cast<Index>(i)) = n.grad.row(seg[i]) / counts(seg[i]);
        x.accumulate(g);
    });
}

Var col_slice(const Var& x, Index start, Index count) {
    require(start >= 0 && start + count <= x.cols(), "col_slice: out of range");
    Matrix out = x.value().middleCols(start, count);
    return make_result(std::move(out), {x}, [start, count](Node& n) {
        Node& x = in(n, 0);
        Matrix g = Matrix::Zero(x.value.rows(), x.value.cols());
        g.middleCols(start, count) = n.grad;
        x.accumulate(g);
    });
}

Var hcat(std::span<const Var> parts) {
    require(!parts.empty(), "hcat: no inputs");
    Index cols = 0;
    for (const auto& p : parts) {
        require(p.rows() == parts[0].rows(), "hcat: row mismatch");
        cols += p.cols();
    }
    Matrix out(parts[0].rows(), cols);
    std::vector<Index> offsets;
    Index off = 0;
    for (const auto& p : parts) {
        out.middleCols(off, p.cols()) = p.value();
        offsets.push_back(off);
        off += p.cols();
    }
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [offsets](Node& n) {
        for (std::size_t i = 0; i < offsets.size(); ++i) {
            Node& p = in(n, i);
            if (p.requires_grad) p.accumulate(n.grad.middleCols(offsets[i], p.value.cols()));
        }
    });
}

Var vcat(std::span<const Var> parts) {
    require(!parts.empty(), "vcat: no inputs");
    Index rows = 0;
    for (const auto& p : parts) {
        require(p.cols() == parts[0].cols(), "vcat: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, parts[0].cols());
    std::vector<Index> offsets;
    Index off = 0;
    for (const auto& p : parts) {
        out.middleRows(off, p.rows()) = p.value();
        offsets.push_back(off);
        off += p.rows();
    }
    return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [offsets](Node& n) {
        for (std::size_t i = 0; i < offsets.size(); ++i) {
            Node& p = in(n, i);
            if (p.requires_grad) p.accumulate(n.grad.middleRows(offsets[i], p.value.rows()));
        }
    });
}

Var im2col(const Var& x, int kernel, int stride, int pad) {
    require(kernel >= 1 && stride >= 1 && pad >= 0, "im2col: bad geometry");
    const Index t = x.rows();
    const Index c = x.cols();
    const Index t_out = (t + 2 * pad - kernel) / stride + 1;
    require(t_out >= 1, "im2col: input shorter than kernel");
    Matrix out = Matrix::Zero(t_out, kernel * c);
    for (Index o = 0; o < t_out; ++o) {
        for (int k = 0; k < kernel; ++k) {
            const Index src = o * stride + k - pad;
            if (src >= 0 && src < t) out.block(o, k * c, 1, c) = x.value().row(src);
        }
    }
    return make_result(std::move(out), {x}, [kernel, stride, pad](Node& n) {
        Node& x = in(n, 0);
        const Index t = x.value.rows();
        const Index c = x.value.cols();
        Matrix g = Matrix::Zero(t, c);
        for (Index o = 0; o < n.grad.rows(); ++o) {
            for (int k = 0; k < kernel; ++k) {
                const Index src = o * stride + k - pad;
                if (src >= 0 && src < t) g.row(src) += n.grad.block(o, k * c, 1, c);
            }
        }
        x.accumulate(g);
    });
}

}  // namespace prosoclap::ag
