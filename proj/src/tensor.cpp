#include "lsc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace lsc {

namespace {

Tensor make_node(Eigen::MatrixXd value, std::vector<Tensor> parents) {
    auto node = std::make_shared<TensorNode>();
    node->value = std::move(value);
    node->parents = std::move(parents);
    for (const Tensor& p : node->parents)
        if (p->requires_grad) node->requires_grad = true;
    node->zero_grad();
    return node;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a->value.rows() != b->value.rows() || a->value.cols() != b->value.cols())
        throw ShapeError(std::string(op) + ": shapes " + std::to_string(a->rows()) + "x" +
                         std::to_string(a->cols()) + " and " + std::to_string(b->rows()) + "x" +
                         std::to_string(b->cols()) + " differ");
}

}  // namespace

Tensor make_constant(Eigen::MatrixXd value) {
    auto node = std::make_shared<TensorNode>();
    node->value = std::move(value);
    node->requires_grad = false;
    node->zero_grad();
    return node;
}

Tensor make_variable(Eigen::MatrixXd value, std::string name) {
    auto node = std::make_shared<TensorNode>();
    node->value = std::move(value);
    node->requires_grad = true;
    node->name = std::move(name);
    node->zero_grad();
    return node;
}

Tensor make_scalar(double value) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = value;
    return make_constant(std::move(m));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a->value.cols() != b->value.rows())
        throw ShapeError("matmul: inner dims " + std::to_string(a->cols()) + " and " +
                         std::to_string(b->rows()) + " differ");
    Tensor out = make_node(a->value * b->value, {a, b});
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
        if (pa->requires_grad) pa->grad.noalias() += o->grad * pb->value.transpose();
        if (pb->requires_grad) pb->grad.noalias() += pa->value.transpose() * o->grad;
    };
    return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a->value.cols() != b->value.cols())
        throw ShapeError("matmul_nt: inner dims " + std::to_string(a->cols()) + " and " +
                         std::to_string(b->cols()) + " differ");
    Tensor out = make_node(a->value * b->value.transpose(), {a, b});
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
        if (pa->requires_grad) pa->grad.noalias() += o->grad * pb->value;
        if (pb->requires_grad) pb->grad.noalias() += o->grad.transpose() * pa->value;
    };
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "add");
    Tensor out = make_node(a->value + b->value, {a, b});
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
        if (pa->requires_grad) pa->grad += o->grad;
        if (pb->requires_grad) pb->grad += o->grad;
    };
    return out;
}

Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (b->value.rows() != 1 || b->value.cols() != a->value.cols())
        throw ShapeError("add_rowvec: bias must be 1x" + std::to_string(a->cols()) + ", got " +
                         std::to_string(b->rows()) + "x" + std::to_string(b->cols()));
    Tensor out = make_node(a->value.rowwise() + b->value.row(0), {a, b});
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
        if (pa->requires_grad) pa->grad += o->grad;
        if (pb->requires_grad) pb->grad.row(0) += o->grad.colwise().sum();
    };
    return out;
}

Tensor cmul(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "cmul");
    Tensor out = make_node(a->value.cwiseProduct(b->value), {a, b});
    TensorNode* o = out.get();
    Tensor pa = a, pb = b;
    out->backward_fn = [o, pa, pb] {
        if (pa->requires_grad) pa->grad += o->grad.cwiseProduct(pb->value);
        if (pb->requires_grad) pb->grad += o->grad.cwiseProduct(pa->value);
    };
    return out;
}

Tensor scale(const Tensor& a, double s) {
    Tensor out = make_node(a->value * s, {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa, s] {
        if (pa->requires_grad) pa->grad += o->grad * s;
    };
    return out;
}

Tensor relu(const Tensor& a) {
    Tensor out = make_node(a->value.cwiseMax(0.0), {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa] {
        if (!pa->requires_grad) return;
        pa->grad += o->grad.cwiseProduct(
            (pa->value.array() > 0.0).cast<double>().matrix());
    };
    return out;
}

Tensor gelu(const Tensor& a) {
    const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
    Eigen::MatrixXd v = a->value.unaryExpr(
        [inv_sqrt2](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); });
    Tensor out = make_node(std::move(v), {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa, inv_sqrt2] {
        if (!pa->requires_grad) return;
        const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * M_PI);
        Eigen::MatrixXd d = pa->value.unaryExpr([inv_sqrt2, inv_sqrt2pi](double x) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
        pa->grad += o->grad.cwiseProduct(d);
    };
    return out;
}

Tensor sigmoid_op(const Tensor& a) {
    Eigen::MatrixXd v = a->value.unaryExpr([](double x) { return sigmoid(x); });
    Tensor out = make_node(std::move(v), {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa] {
        if (!pa->requires_grad) return;
        Eigen::MatrixXd d =
            o->value.cwiseProduct((Eigen::MatrixXd::Ones(o->value.rows(), o->value.cols()) -
                                   o->value));
        pa->grad += o->grad.cwiseProduct(d);
    };
    return out;
}

Tensor softmax_rows(const Tensor& a) {
    Eigen::MatrixXd v = a->value;
    for (Eigen::Index r = 0; r < v.rows(); ++r) {
        const double mx = v.row(r).maxCoeff();
        v.row(r) = (v.row(r).array() - mx).exp();
        v.row(r) /= v.row(r).sum();
    }
    Tensor out = make_node(std::move(v), {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa] {
        if (!pa->requires_grad) return;
        for (Eigen::Index r = 0; r < o->value.rows(); ++r) {
            const double dot = o->grad.row(r).dot(o->value.row(r));
            pa->grad.row(r) +=
                (o->value.row(r).array() * (o->grad.row(r).array() - dot)).matrix();
        }
    };
    return out;
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    const Eigen::Index cols = x->value.cols();
    if (gamma->value.rows() != 1 || gamma->value.cols() != cols || beta->value.rows() != 1 ||
        beta->value.cols() != cols)
        throw ShapeError("layernorm_rows: gamma/beta must be 1x" + std::to_string(cols));

    Eigen::MatrixXd xhat(x->value.rows(), cols);
    Eigen::VectorXd inv_std(x->value.rows());
    for (Eigen::Index r = 0; r < x->value.rows(); ++r) {
        const double mu = x->value.row(r).mean();
        const double var = (x->value.row(r).array() - mu).square().mean();
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (x->value.row(r).array() - mu) * inv_std(r);
    }
    Eigen::MatrixXd v =
        (xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() +
        beta->value.row(0).array();
    Tensor out = make_node(std::move(v), {x, gamma, beta});
    TensorNode* o = out.get();
    Tensor px = x, pg = gamma, pb = beta;
    auto xh = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
    auto istd = std::make_shared<Eigen::VectorXd>(std::move(inv_std));
    out->backward_fn = [o, px, pg, pb, xh, istd] {
        if (pg->requires_grad)
            pg->grad.row(0) += o->grad.cwiseProduct(*xh).colwise().sum();
        if (pb->requires_grad) pb->grad.row(0) += o->grad.colwise().sum();
        if (!px->requires_grad) return;
        for (Eigen::Index r = 0; r < o->value.rows(); ++r) {
            Eigen::RowVectorXd g = o->grad.row(r).cwiseProduct(pg->value.row(0));
            const double mean_g = g.mean();
            const double mean_gx = g.cwiseProduct(xh->row(r)).mean();
            px->grad.row(r) +=
                (*istd)(r) * (g.array() - mean_g - xh->row(r).array() * mean_gx).matrix();
        }
    };
    return out;
}

Tensor mean_rows(const Tensor& a) {
    Eigen::MatrixXd v = a->value.colwise().mean();
    Tensor out = make_node(std::move(v), {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa] {
        if (!pa->requires_grad) return;
        const double inv = 1.0 / static_cast<double>(pa->value.rows());
        pa->grad += (Eigen::VectorXd::Ones(pa->value.rows()) * o->grad.row(0)) * inv;
    };
    return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat_rows: no parts");
    const Eigen::Index cols = parts[0]->value.cols();
    Eigen::Index rows = 0;
    for (const Tensor& p : parts) {
        if (p->value.cols() != cols) throw ShapeError("concat_rows: column counts differ");
        rows += p->value.rows();
    }
    Eigen::MatrixXd v(rows, cols);
    Eigen::Index at = 0;
    for (const Tensor& p : parts) {
        v.middleRows(at, p->value.rows()) = p->value;
        at += p->value.rows();
    }
    Tensor out = make_node(std::move(v), parts);
    TensorNode* o = out.get();
    auto ps = parts;
    out->backward_fn = [o, ps] {
        Eigen::Index at = 0;
        for (const Tensor& p : ps) {
            if (p->requires_grad) p->grad += o->grad.middleRows(at, p->value.rows());
            at += p->value.rows();
        }
    };
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw PreconditionError("concat_cols: no parts");
    const Eigen::Index rows = parts[0]->value.rows();
    Eigen::Index cols = 0;
    for (const Tensor& p : parts) {
        if (p->value.rows() != rows) throw ShapeError("concat_cols: row counts differ");
        cols += p->value.cols();
    }
    Eigen::MatrixXd v(rows, cols);
    Eigen::Index at = 0;
    for (const Tensor& p : parts) {
        v.middleCols(at, p->value.cols()) = p->value;
        at += p->value.cols();
    }
    Tensor out = make_node(std::move(v), parts);
    TensorNode* o = out.get();
    auto ps = parts;
    out->backward_fn = [o, ps] {
        Eigen::Index at = 0;
        for (const Tensor& p : ps) {
            if (p->requires_grad) p->grad += o->grad.middleCols(at, p->value.cols());
            at += p->value.cols();
        }
    };
    return out;
}

Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len) {
    if (start + len > a->cols())
        throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                         std::to_string(start + len) + ") exceeds " + std::to_string(a->cols()) +
                         " columns");
    Tensor out = make_node(
        a->value.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(len)),
        {a});
    TensorNode* o = out.get();
    Tensor pa = a;
    out->backward_fn = [o, pa, start, len] {
        if (pa->requires_grad)
            pa->grad.middleCols(static_cast<Eigen::Index>(start),
                                static_cast<Eigen::Index>(len)) += o->grad;
    };
    return out;
}

Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       Eigen::RowVectorXd* batch_mean, Eigen::RowVectorXd* batch_var) {
    const Eigen::Index cols = x->value.cols();
    if (gamma->value.cols() != cols || beta->value.cols() != cols)
        throw ShapeError("batchnorm: gamma/beta must be 1x" + std::to_string(cols));
    if (x->value.rows() < 2)
        throw PreconditionError("batchnorm needs a batch of at least 2 rows, got " +
                                std::to_string(x->rows()));

    Eigen::RowVectorXd mu = x->value.colwise().mean();
    Eigen::RowVectorXd var =
        (x->value.rowwise() - mu).array().square().colwise().mean();
    if (batch_mean) *batch_mean = mu;
    if (batch_var) *batch_var = var;

    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Eigen::MatrixXd xhat =
        (x->value.rowwise() - mu).array().rowwise() * inv_std.array();
    Eigen::MatrixXd v = (xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() +
                        beta->value.row(0).array();
    Tensor out = make_node(std::move(v), {x, gamma, beta});
    TensorNode* o = out.get();
    Tensor px = x, pg = gamma, pb = beta;
    auto xh = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
    auto istd = std::make_shared<Eigen::RowVectorXd>(std::move(inv_std));
    out->backward_fn = [o, px, pg, pb, xh, istd] {
        if (pg->requires_grad) pg->grad.row(0) += o->grad.cwiseProduct(*xh).colwise().sum();
        if (pb->requires_grad) pb->grad.row(0) += o->grad.colwise().sum();
        if (!px->requires_grad) return;
        Eigen::MatrixXd g = o->grad.array().rowwise() * pg->value.row(0).array();
        Eigen::RowVectorXd mean_g = g.colwise().mean();
        Eigen::RowVectorXd mean_gx = g.cwiseProduct(*xh).colwise().mean();
        Eigen::MatrixXd dx =
            ((g.rowwise() - mean_g).array() - xh->array().rowwise() * mean_gx.array())
                .rowwise() *
            istd->array();
        px->grad += dx;
    };
    return out;
}

Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& var, double eps) {
    const Eigen::Index cols = x->value.cols();
    if (gamma->value.cols() != cols || beta->value.cols() != cols || mean.cols() != cols ||
        var.cols() != cols)
        throw ShapeError("batchnorm_eval: parameter widths must be " + std::to_string(cols));
    Eigen::RowVectorXd inv_std = (var.array() + eps).rsqrt();
    Eigen::MatrixXd xhat = (x->value.rowwise() - mean).array().rowwise() * inv_std.array();
    Eigen::MatrixXd v = (xhat.array().rowwise() * gamma->value.row(0).array()).rowwise() +
                        beta->value.row(0).array();
    Tensor out = make_node(std::move(v), {x, gamma, beta});
    TensorNode* o = out.get();
    Tensor px = x, pg = gamma, pb = beta;
    auto xh = std::make_shared<Eigen::MatrixXd>(std::move(xhat));
    auto istd = std::make_shared<Eigen::RowVectorXd>(std::move(inv_std));
    out->backward_fn = [o, px, pg, pb, xh, istd] {
        if (pg->requires_grad) pg->grad.row(0) += o->grad.cwiseProduct(*xh).colwise().sum();
        if (pb->requires_grad) pb->grad.row(0) += o->grad.colwise().sum();
        if (px->requires_grad)
            px->grad +=
                (o->grad.array().rowwise() * (pg->value.row(0).array() * istd->array())).matrix();
    };
    return out;
}

Tensor dropout(const Tensor& a, double p, Rng& rng, bool training) {
    if (p < 0.0 || p >= 1.0)
        throw ValueError("dropout rate must be in [0, 1), got " + std::to_string(p));
    if (!training || p == 0.0) return a;
    const double keep = 1.0 - p;
    Eigen::MatrixXd mask(a->value.rows(), a->value.cols());
    for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c)
            mask(r, c) = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    return cmul(a, make_constant(std::move(mask)));
}

Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "bce_with_logits_mean");
    const double n = static_cast<double>(logits->value.size());
    double loss = 0.0;
    for (Eigen::Index r = 0; r < logits->value.rows(); ++r) {
        for (Eigen::Index c = 0; c < logits->value.cols(); ++c) {
            const double z = logits->value(r, c);
            const double y = targets->value(r, c);
            const double softplus =
                z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            loss += softplus - y * z;
        }
    }
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = loss / n;
    Tensor out = make_node(std::move(v), {logits, targets});
    TensorNode* o = out.get();
    Tensor pl = logits, pt = targets;
    out->backward_fn = [o, pl, pt, n] {
        if (!pl->requires_grad) return;
        const double g = o->grad(0, 0) / n;
        pl->grad += g * (pl->value.unaryExpr([](double z) { return sigmoid(z); }) - pt->value);
    };
    return out;
}

Tensor soft_f1_loss(const Tensor& logits, const Tensor& targets) {
    check_same_shape(logits, targets, "soft_f1_loss");
    constexpr double kEps = 1e-8;
    Eigen::MatrixXd p = logits->value.unaryExpr([](double z) { return sigmoid(z); });
    const double inter = p.cwiseProduct(targets->value).sum();
    const double denom = p.sum() + targets->value.sum() + kEps;
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = 1.0 - 2.0 * inter / denom;
    Tensor out = make_node(std::move(v), {logits, targets});
    TensorNode* o = out.get();
    Tensor pl = logits, pt = targets;
    auto probs = std::make_shared<Eigen::MatrixXd>(std::move(p));
    out->backward_fn = [o, pl, pt, probs, inter, denom] {
        if (!pl->requires_grad) return;
        const double g = o->grad(0, 0);
        // dL/dp_i = -2 (y_i * denom - inter) / denom^2, then chain through the
        // sigmoid
        Eigen::MatrixXd dp =
            (-2.0 / (denom * denom)) * (pt->value.array() * denom - inter).matrix();
        Eigen::MatrixXd ds = probs->cwiseProduct(
            Eigen::MatrixXd::Ones(probs->rows(), probs->cols()) - *probs);
        pl->grad += g * dp.cwiseProduct(ds);
    };
    return out;
}

void backward(const Tensor& root) {
    if (!root) throw PreconditionError("backward: null tensor");
    if (root->value.rows() != 1 || root->value.cols() != 1)
        throw PreconditionError("backward expects a scalar root, got " +
                                std::to_string(root->rows()) + "x" + std::to_string(root->cols()));

    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* parent = node->parents[next++].get();
            if (seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    root->grad(0, 0) += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn && (*it)->requires_grad) (*it)->backward_fn();
}

}  // namespace lsc
