#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>

#include "diffcap/rng.hpp"

namespace diffcap {

// A named trainable matrix with an accumulated gradient.
struct Parameter {
    std::string name;
    Matrix value;
    Matrix grad;

    Parameter(std::string n, int rows, int cols)
        : name(std::move(n)), value(Matrix::Zero(rows, cols)), grad(Matrix::Zero(rows, cols)) {}

    void zero_grad() { grad.setZero(); }
};

// Flat, insertion-ordered collection of parameters. The ordering is the
// serialization and optimizer-iteration order, so it must stay deterministic.
class ParameterStore {
  public:
    Parameter& create(const std::string& name, int rows, int cols);
    // create-or-fetch; throws if an existing entry has a different shape
    Parameter& ensure(const std::string& name, int rows, int cols);
    Parameter& at(const std::string& name);
    const Parameter& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) > 0; }

    std::size_t size() const { return params_.size(); }
    Parameter& operator[](std::size_t i) { return *params_[i]; }
    const Parameter& operator[](std::size_t i) const { return *params_[i]; }

    std::vector<std::string> names() const;
    std::size_t num_scalars() const;
    void zero_grad();
    double grad_norm() const;  // global L2 norm over every entry

  private:
    std::vector<std::unique_ptr<Parameter>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

// Handle into a Tape.
struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
};

// Single-use reverse-mode tape over dense double matrices. Nodes are created
// in topological order by construction, so backward() is a reverse sweep over
// the creation order. A tape supports at most one backward() call.
class Tape {
  public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Matrix v);          // constant leaf, no gradient
    Var param(Parameter& p);      // trainable leaf; backward() accumulates into p.grad

    const Matrix& val(Var v) const { return nodes_[check(v)].value; }
    const Matrix& grad(Var v) const;  // valid after backward()
    bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }
    std::size_t size() const { return nodes_.size(); }

    Var matmul(Var a, Var b);     // A * B
    Var matmul_nt(Var a, Var b);  // A * B^T
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var add_rowvec(Var a, Var row);  // broadcast a 1 x C row over all rows of A
    Var mul_scalar(Var a, double c);
    Var relu(Var a);
    Var gelu(Var a);  // exact erf form
    Var softmax_rows(Var a);
    Var layer_norm(Var a, Var gamma, Var beta);  // gamma, beta are 1 x C
    Var dropout(Var a, double rate, RngStream& rng);
    Var concat_cols(const std::vector<Var>& parts);
    Var concat_rows(const std::vector<Var>& parts);
    Var gather_rows(Var table, std::vector<int> ids);
    Var sum_sq(Var a);  // 1x1
    Var cross_entropy_rows(Var logits, std::vector<int> targets);  // 1x1, mean over rows

    // Seed is the 1x1 root; propagates d(root)/d(leaf) into every Parameter::grad.
    void backward(Var root);

  private:
    struct Node {
        Matrix value;
        Matrix grad;
        bool requires_grad = false;
        bool grad_live = false;
        Parameter* bound = nullptr;
        std::function<void(Tape&, const Matrix&)> back;  // pull pass: distribute out-grad to parents
    };

    int check(Var v) const;
    Var make(Matrix value, bool requires_grad);
    void accum(int id, const Matrix& g);

    std::vector<Node> nodes_;
    bool backward_done_ = false;

    static constexpr double kLayerNormEps = 1e-5;
};

}  // namespace diffcap
