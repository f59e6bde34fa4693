#include "diffcap/tape.hpp"

#include <cmath>
#include <stdexcept>

namespace diffcap {

Parameter& ParameterStore::create(const std::string& name, int rows, int cols) {
    if (index_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
    params_.push_back(std::make_unique<Parameter>(name, rows, cols));
    index_[name] = params_.size() - 1;
    return *params_.back();
}

Parameter& ParameterStore::ensure(const std::string& name, int rows, int cols) {
    auto it = index_.find(name);
    if (it == index_.end()) return create(name, rows, cols);
    Parameter& p = *params_[it->second];
    if (p.value.rows() != rows || p.value.cols() != cols)
        throw std::invalid_argument("parameter shape mismatch for " + name);
    return p;
}

Parameter& ParameterStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
}

const Parameter& ParameterStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
    return *params_[it->second];
}

std::vector<std::string> ParameterStore::names() const {
    std::vector<std::string> out;
    out.reserve(params_.size());
    for (const auto& p : params_) out.push_back(p->name);
    return out;
}

std::size_t ParameterStore::num_scalars() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

double ParameterStore::grad_norm() const {
    double sq = 0.0;
    for (const auto& p : params_) sq += p->grad.squaredNorm();
    return std::sqrt(sq);
}

int Tape::check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
        throw std::invalid_argument("Var does not belong to this tape");
    return v.id;
}

Var Tape::make(Matrix value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int id, const Matrix& g) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (!n.grad_live) {
        n.grad = g;
        n.grad_live = true;
    } else {
        n.grad += g;
    }
}

const Matrix& Tape::grad(Var v) const {
    const Node& n = nodes_[check(v)];
    if (!n.grad_live) throw std::logic_error("gradient not populated; call backward() first");
    return n.grad;
}

Var Tape::input(Matrix v) { return make(std::move(v), false); }

Var Tape::param(Parameter& p) {
    Var v = make(p.value, true);
    nodes_[v.id].bound = &p;
    nodes_[v.id].back = [id = v.id](Tape& t, const Matrix& g) {
        t.nodes_[id].bound->grad += g;
    };
    return v;
}

Var Tape::matmul(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Matrix& A = nodes_[ia].value;
    const Matrix& B = nodes_[ib].value;
    if (A.cols() != B.rows()) throw std::invalid_argument("matmul shape mismatch");
    Var out = make(A * B, nodes_[ia].requires_grad || nodes_[ib].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, ib](Tape& t, const Matrix& g) {
            t.accum(ia, g * t.nodes_[ib].value.transpose());
            t.accum(ib, t.nodes_[ia].value.transpose() * g);
        };
    }
    return out;
}

Var Tape::matmul_nt(Var a, Var b) {
    int ia = check(a), ib = check(b);
    const Matrix& A = nodes_[ia].value;
    const Matrix& B = nodes_[ib].value;
    if (A.cols() != B.cols()) throw std::invalid_argument("matmul_nt shape mismatch");
    Var out = make(A * B.transpose(), nodes_[ia].requires_grad || nodes_[ib].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, ib](Tape& t, const Matrix& g) {
            t.accum(ia, g * t.nodes_[ib].value);
            t.accum(ib, g.transpose() * t.nodes_[ia].value);
        };
    }
    return out;
}

Var Tape::add(Var a, Var b) {
    int ia = check(a), ib = check(b);
    if (nodes_[ia].value.rows() != nodes_[ib].value.rows() ||
        nodes_[ia].value.cols() != nodes_[ib].value.cols())
        throw std::invalid_argument("add shape mismatch");
    Var out = make(nodes_[ia].value + nodes_[ib].value,
                   nodes_[ia].requires_grad || nodes_[ib].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, ib](Tape& t, const Matrix& g) {
            t.accum(ia, g);
            t.accum(ib, g);
        };
    }
    return out;
}

Var Tape::sub(Var a, Var b) {
    int ia = check(a), ib = check(b);
    if (nodes_[ia].value.rows() != nodes_[ib].value.rows() ||
        nodes_[ia].value.cols() != nodes_[ib].value.cols())
        throw std::invalid_argument("sub shape mismatch");
    Var out = make(nodes_[ia].value - nodes_[ib].value,
                   nodes_[ia].requires_grad || nodes_[ib].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, ib](Tape& t, const Matrix& g) {
            t.accum(ia, g);
            t.accum(ib, -g);
        };
    }
    return out;
}

Var Tape::add_rowvec(Var a, Var row) {
    int ia = check(a), ir = check(row);
    const Matrix& A = nodes_[ia].value;
    const Matrix& R = nodes_[ir].value;
    if (R.rows() != 1 || R.cols() != A.cols())
        throw std::invalid_argument("add_rowvec expects a 1 x cols(A) row");
    Matrix y = A;
    y.rowwise() += R.row(0);
    Var out = make(std::move(y), nodes_[ia].requires_grad || nodes_[ir].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, ir](Tape& t, const Matrix& g) {
            t.accum(ia, g);
            t.accum(ir, g.colwise().sum());
        };
    }
    return out;
}

Var Tape::mul_scalar(Var a, double c) {
    int ia = check(a);
    Var out = make(nodes_[ia].value * c, nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, c](Tape& t, const Matrix& g) { t.accum(ia, g * c); };
    }
    return out;
}

Var Tape::relu(Var a) {
    int ia = check(a);
    Var out = make(nodes_[ia].value.cwiseMax(0.0), nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia](Tape& t, const Matrix& g) {
            const Matrix& x = t.nodes_[ia].value;
            t.accum(ia, (x.array() > 0.0).cast<double>() * g.array());
        };
    }
    return out;
}

Var Tape::gelu(Var a) {
    int ia = check(a);
    const Matrix& x = nodes_[ia].value;
    Matrix y = x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); });
    Var out = make(std::move(y), nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia](Tape& t, const Matrix& g) {
            const Matrix& x = t.nodes_[ia].value;
            Matrix d = x.unaryExpr([](double v) {
                const double cdf = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                const double pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
                return cdf + v * pdf;
            });
            t.accum(ia, g.cwiseProduct(d));
        };
    }
    return out;
}

Var Tape::softmax_rows(Var a) {
    int ia = check(a);
    const Matrix& x = nodes_[ia].value;
    Matrix y(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
        const double m = x.row(i).maxCoeff();
        Eigen::RowVectorXd e = (x.row(i).array() - m).exp();
        y.row(i) = e / e.sum();
    }
    Var out = make(std::move(y), nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, io = out.id](Tape& t, const Matrix& g) {
            const Matrix& y = t.nodes_[io].value;
            Matrix dx(y.rows(), y.cols());
            for (int i = 0; i < y.rows(); ++i) {
                const double s = g.row(i).dot(y.row(i));
                dx.row(i) = (g.row(i).array() - s) * y.row(i).array();
            }
            t.accum(ia, dx);
        };
    }
    return out;
}

Var Tape::layer_norm(Var a, Var gamma, Var beta) {
    int ia = check(a), ig = check(gamma), ib = check(beta);
    const Matrix& x = nodes_[ia].value;
    const int cols = static_cast<int>(x.cols());
    if (nodes_[ig].value.rows() != 1 || nodes_[ig].value.cols() != cols ||
        nodes_[ib].value.rows() != 1 || nodes_[ib].value.cols() != cols)
        throw std::invalid_argument("layer_norm scale/shift must be 1 x cols");

    // cache the normalized activations and per-row 1/sigma for backward
    auto xhat = std::make_shared<Matrix>(x.rows(), cols);
    auto inv_sigma = std::make_shared<Eigen::VectorXd>(x.rows());
    for (int i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        const double is = 1.0 / std::sqrt(var + kLayerNormEps);
        (*inv_sigma)(i) = is;
        xhat->row(i) = (x.row(i).array() - mu) * is;
    }
    Matrix y = (xhat->array().rowwise() * nodes_[ig].value.row(0).array()).rowwise() +
               nodes_[ib].value.row(0).array();
    bool rg = nodes_[ia].requires_grad || nodes_[ig].requires_grad || nodes_[ib].requires_grad;
    Var out = make(std::move(y), rg);
    if (rg) {
        nodes_[out.id].back = [ia, ig, ib, xhat, inv_sigma](Tape& t, const Matrix& g) {
            t.accum(ib, g.colwise().sum());
            t.accum(ig, g.cwiseProduct(*xhat).colwise().sum());
            Matrix dxhat = g.array().rowwise() * t.nodes_[ig].value.row(0).array();
            Matrix dx(g.rows(), g.cols());
            for (int i = 0; i < g.rows(); ++i) {
                const double m1 = dxhat.row(i).mean();
                const double m2 = dxhat.row(i).cwiseProduct(xhat->row(i)).mean();
                dx.row(i) =
                    (*inv_sigma)(i) * (dxhat.row(i).array() - m1 - xhat->row(i).array() * m2);
            }
            t.accum(ia, dx);
        };
    }
    return out;
}

Var Tape::dropout(Var a, double rate, RngStream& rng) {
    int ia = check(a);
    if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
    if (rate == 0.0) return a;
    const Matrix& x = nodes_[ia].value;
    const double keep_scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
        for (int j = 0; j < x.cols(); ++j)
            (*mask)(i, j) = rng.uniform() < rate ? 0.0 : keep_scale;
    Var out = make(x.cwiseProduct(*mask), nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia, mask](Tape& t, const Matrix& g) {
            t.accum(ia, g.cwiseProduct(*mask));
        };
    }
    return out;
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty");
    std::vector<int> ids;
    ids.reserve(parts.size());
    int rows = -1, cols = 0;
    bool rg = false;
    for (Var p : parts) {
        int id = check(p);
        ids.push_back(id);
        const Matrix& m = nodes_[id].value;
        if (rows < 0)
            rows = static_cast<int>(m.rows());
        else if (m.rows() != rows)
            throw std::invalid_argument("concat_cols row mismatch");
        cols += static_cast<int>(m.cols());
        rg = rg || nodes_[id].requires_grad;
    }
    Matrix y(rows, cols);
    int off = 0;
    for (int id : ids) {
        const Matrix& m = nodes_[id].value;
        y.middleCols(off, m.cols()) = m;
        off += static_cast<int>(m.cols());
    }
    Var out = make(std::move(y), rg);
    if (rg) {
        nodes_[out.id].back = [ids](Tape& t, const Matrix& g) {
            int off = 0;
            for (int id : ids) {
                const int w = static_cast<int>(t.nodes_[id].value.cols());
                t.accum(id, g.middleCols(off, w));
                off += w;
            }
        };
    }
    return out;
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty");
    std::vector<int> ids;
    ids.reserve(parts.size());
    int cols = -1, rows = 0;
    bool rg = false;
    for (Var p : parts) {
        int id = check(p);
        ids.push_back(id);
        const Matrix& m = nodes_[id].value;
        if (cols < 0)
            cols = static_cast<int>(m.cols());
        else if (m.cols() != cols)
            throw std::invalid_argument("concat_rows column mismatch");
        rows += static_cast<int>(m.rows());
        rg = rg || nodes_[id].requires_grad;
    }
    Matrix y(rows, cols);
    int off = 0;
    for (int id : ids) {
        const Matrix& m = nodes_[id].value;
        y.middleRows(off, m.rows()) = m;
        off += static_cast<int>(m.rows());
    }
    Var out = make(std::move(y), rg);
    if (rg) {
        nodes_[out.id].back = [ids](Tape& t, const Matrix& g) {
            int off = 0;
            for (int id : ids) {
                const int h = static_cast<int>(t.nodes_[id].value.rows());
                t.accum(id, g.middleRows(off, h));
                off += h;
            }
        };
    }
    return out;
}

Var Tape::gather_rows(Var table, std::vector<int> ids) {
    int it = check(table);
    const Matrix& T = nodes_[it].value;
    Matrix y(static_cast<int>(ids.size()), T.cols());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] >= T.rows())
            throw std::out_of_range("gather_rows: id out of range");
        y.row(static_cast<int>(i)) = T.row(ids[i]);
    }
    Var out = make(std::move(y), nodes_[it].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [it, ids = std::move(ids)](Tape& t, const Matrix& g) {
            Matrix dT = Matrix::Zero(t.nodes_[it].value.rows(), t.nodes_[it].value.cols());
            for (std::size_t i = 0; i < ids.size(); ++i)
                dT.row(ids[i]) += g.row(static_cast<int>(i));
            t.accum(it, dT);
        };
    }
    return out;
}

Var Tape::sum_sq(Var a) {
    int ia = check(a);
    Matrix y(1, 1);
    y(0, 0) = nodes_[ia].value.squaredNorm();
    Var out = make(std::move(y), nodes_[ia].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [ia](Tape& t, const Matrix& g) {
            t.accum(ia, 2.0 * g(0, 0) * t.nodes_[ia].value);
        };
    }
    return out;
}

Var Tape::cross_entropy_rows(Var logits, std::vector<int> targets) {
    int il = check(logits);
    const Matrix& L = nodes_[il].value;
    if (static_cast<int>(targets.size()) != L.rows())
        throw std::invalid_argument("cross_entropy_rows: one target per row required");
    if (!L.allFinite()) throw std::invalid_argument("cross_entropy_rows: non-finite logits");

    auto probs = std::make_shared<Matrix>(L.rows(), L.cols());
    double total = 0.0;
    for (int i = 0; i < L.rows(); ++i) {
        if (targets[i] < 0 || targets[i] >= L.cols())
            throw std::out_of_range("cross_entropy_rows: target id out of range");
        const double m = L.row(i).maxCoeff();
        Eigen::RowVectorXd e = (L.row(i).array() - m).exp();
        const double z = e.sum();
        probs->row(i) = e / z;
        total += (m + std::log(z)) - L(i, targets[i]);
    }
    Matrix y(1, 1);
    y(0, 0) = total / static_cast<double>(L.rows());
    Var out = make(std::move(y), nodes_[il].requires_grad);
    if (nodes_[out.id].requires_grad) {
        nodes_[out.id].back = [il, probs, targets = std::move(targets)](Tape& t,
                                                                        const Matrix& g) {
            Matrix d = *probs;
            for (std::size_t i = 0; i < targets.size(); ++i)
                d(static_cast<int>(i), targets[i]) -= 1.0;
            t.accum(il, d * (g(0, 0) / static_cast<double>(targets.size())));
        };
    }
    return out;
}

void Tape::backward(Var root) {
    if (backward_done_) throw std::logic_error("Tape::backward may run only once per tape");
    int ir = check(root);
    if (nodes_[ir].value.rows() != 1 || nodes_[ir].value.cols() != 1)
        throw std::invalid_argument("backward root must be 1x1");
    backward_done_ = true;
    if (!nodes_[ir].requires_grad) return;  // nothing trainable upstream
    nodes_[ir].grad = Matrix::Ones(1, 1);
    nodes_[ir].grad_live = true;
    for (int i = ir; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.grad_live && n.back) n.back(*this, n.grad);
    }
}

}  // namespace diffcap
