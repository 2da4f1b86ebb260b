#ifndef LSC_TENSOR_HPP
#define LSC_TENSOR_HPP

#include <Eigen/Dense>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lsc/common.hpp"

namespace lsc {

// Reverse-mode autodiff over dense matrices. Nodes form a DAG through their
// parent links; backward() runs the recorded closures in reverse topological
// order and accumulates into .grad.
struct TensorNode {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;
    bool requires_grad = false;
    std::string name;

    std::size_t rows() const { return static_cast<std::size_t>(value.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(value.cols()); }
    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

using Tensor = std::shared_ptr<TensorNode>;

Tensor make_constant(Eigen::MatrixXd value);
Tensor make_variable(Eigen::MatrixXd value, std::string name);
Tensor make_scalar(double value);

// core ops
Tensor matmul(const Tensor& a, const Tensor& b);     // a * b
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // a * b^T
Tensor add(const Tensor& a, const Tensor& b);        // same shape
Tensor add_rowvec(const Tensor& a, const Tensor& b); // b is 1 x cols, broadcast over rows
Tensor cmul(const Tensor& a, const Tensor& b);       // elementwise
Tensor scale(const Tensor& a, double s);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);                        // exact erf form
Tensor sigmoid_op(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor layernorm_rows(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
Tensor mean_rows(const Tensor& a);                   // 1 x cols
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, std::size_t start, std::size_t len);
// column-wise batch norm; mean/var are constants in eval mode
Tensor batchnorm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                       Eigen::RowVectorXd* batch_mean, Eigen::RowVectorXd* batch_var);
Tensor batchnorm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      const Eigen::RowVectorXd& mean, const Eigen::RowVectorXd& var, double eps);
Tensor dropout(const Tensor& a, double p, Rng& rng, bool training);

// losses (targets are non-differentiable constants in {0,1})
Tensor bce_with_logits_mean(const Tensor& logits, const Tensor& targets);
Tensor soft_f1_loss(const Tensor& logits, const Tensor& targets);

// Seeds root grad with 1 and propagates; root must be scalar (1x1).
void backward(const Tensor& root);

}  // namespace lsc

#endif
