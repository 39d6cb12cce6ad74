#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace vafuse {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape) noexcept;
std::string to_string(const Shape& shape);

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

enum class Mode { Train, Eval };

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this node's grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  std::vector<double>& grad_storage();
};

}  // namespace detail

/// Reference-counted handle to a value in the differentiation graph.
///
/// Copies share the underlying node. Every op returns a fresh node; leaves
/// (parameters, inputs) are the only nodes whose values may be mutated in
/// place, and only between graph constructions.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t size() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  /// In-place access for leaves (optimizer updates, finite differences).
  std::span<double> mutable_data() { return node_->value; }
  double item() const;
  double at(std::size_t flat_index) const { return node_->value.at(flat_index); }
  std::vector<double> to_vector() const { return node_->value; }

  /// Row-major matrix view of a rank-2 tensor.
  ConstMatrixMap matrix() const;

  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  bool has_grad() const noexcept { return node_ && !node_->grad.empty(); }
  /// Gradient values; zeros when nothing has flowed in yet.
  std::vector<double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Reverse sweep from this scalar; leaves accumulate into their grad.
  void backward() const;

  /// New leaf holding a copy of the values, outside any graph.
  Tensor detach() const;

  bool is_leaf() const noexcept { return node_ && !node_->backward; }
  const std::shared_ptr<detail::Node>& node() const noexcept { return node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>,
                        std::function<void(detail::Node&)>);

  std::shared_ptr<detail::Node> node_;
};

/// Builds an op result. The backward closure is recorded only when some
/// input requires grad; it must accumulate (not assign) into input grads.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               std::function<void(detail::Node&)> backward);

/// Named trainable tensor.
struct Parameter {
  std::string name;
  Tensor tensor;
};

/// Xavier-uniform weights drawn from (name, seed).
Tensor xavier_uniform(const std::string& name, std::uint64_t seed, Shape shape,
                      std::size_t fan_in, std::size_t fan_out);

}  // namespace vafuse
