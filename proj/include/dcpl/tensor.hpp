#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace dcpl::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// One value in the differentiation graph. Nodes are created in increasing
// `id` order, and every node's inputs exist before it does, so sorting the
// nodes reachable from a loss by id yields a valid tape order.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until a gradient arrives
    bool requires_grad = false;
    bool consumed = false;     // set on a loss once backward has run from it
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;  // pushes this->grad into inputs

    bool has_grad() const { return !grad.empty(); }
    std::vector<double>& grad_buffer();
};

// Shared handle to a Node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor vector(std::vector<double> values, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<const double> data() const { return node_->value; }
    // Direct write access; only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->value; }
    double item() const;
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on);
    bool has_grad() const { return node_->has_grad(); }
    std::span<const double> grad() const { return node_->grad; }
    void clear_grad() { node_->grad.clear(); }

    std::uint64_t node_id() const { return node_->id; }
    Node& node() const { return *node_; }
    const std::shared_ptr<Node>& ptr() const { return node_; }

    // Same values, fresh leaf without history.
    Tensor detach() const;
    std::vector<double> to_vector() const { return node_->value; }

private:
    std::shared_ptr<Node> node_;
};

// While alive on a thread, ops on that thread record no graph.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};
bool grad_enabled();

// Builds an op result. When grad recording is on and any input requires
// grad, the result keeps `inputs` and `backward`; otherwise it is a constant.
Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward, const char* op);

// Nodes reachable from `loss` that take part in differentiation, ordered so
// that every node comes after its inputs.
struct Tape {
    std::vector<Node*> nodes;
};
Tape record_tape(const Tensor& loss);

// Reverse sweep from a scalar loss. Gradients accumulate into every
// requires_grad node reachable from it. A loss can be swept once; a second
// call without a fresh forward pass throws PreconditionError.
void backward(const Tensor& loss);

}  // namespace dcpl::ad
