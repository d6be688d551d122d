#include "dcpl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

#include "dcpl/errors.hpp"

namespace dcpl::ad {

namespace {
std::atomic<std::uint64_t> g_next_id{1};
thread_local bool t_grad_enabled = true;

std::shared_ptr<Node> new_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}
}  // namespace

std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

std::vector<double>& Node::grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    for (auto d : shape)
        if (d == 0) throw DimensionError("zero-sized dimension in " + shape_str(shape));
    if (ad::numel(shape) != values.size())
        throw DimensionError("shape " + shape_str(shape) + " holds " + std::to_string(ad::numel(shape)) +
                             " values, got " + std::to_string(values.size()));
    auto n = new_node(std::move(shape), std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0, requires_grad); }

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    const auto n = ad::numel(shape);
    return from(std::move(shape), std::vector<double>(n, v), requires_grad);
}

Tensor Tensor::scalar(double v, bool requires_grad) { return from({1}, {v}, requires_grad); }

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
    const auto n = values.size();
    return from({n}, std::move(values), requires_grad);
}

double Tensor::item() const {
    if (numel() != 1) throw PreconditionError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    if (rank() != 2) throw DimensionError("at(r, c) on rank-" + std::to_string(rank()) + " tensor");
    return node_->value.at(r * node_->shape[1] + c);
}

void Tensor::set_requires_grad(bool on) {
    node_->requires_grad = on;
    if (!on) node_->grad.clear();
}

Tensor Tensor::detach() const { return from(node_->shape, node_->value, false); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                   std::function<void(Node&)> backward, const char* op) {
    auto n = new_node(std::move(shape), std::move(value));
    n->op = op;
    if (t_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            n->requires_grad = true;
            n->inputs.reserve(inputs.size());
            for (auto& t : inputs) n->inputs.push_back(t.ptr());
            n->backward = std::move(backward);
        }
    }
    return Tensor(std::move(n));
}

Tape record_tape(const Tensor& loss) {
    Tape tape;
    if (!loss.requires_grad()) return tape;
    std::vector<Node*> stack{&loss.node()};
    std::unordered_set<Node*> seen{&loss.node()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        tape.nodes.push_back(n);
        for (auto& in : n->inputs)
            if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
    }
    std::sort(tape.nodes.begin(), tape.nodes.end(), [](Node* a, Node* b) { return a->id < b->id; });
    return tape;
}

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.numel() != 1)
        throw PreconditionError("backward needs a scalar loss, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    if (!loss.requires_grad()) throw PreconditionError("loss does not depend on any learnable tensor");
    Node& root = loss.node();
    if (root.consumed) throw PreconditionError("backward already ran from this loss; recompute the forward pass");
    Tape tape = record_tape(loss);
    root.grad_buffer()[0] += 1.0;
    for (auto it = tape.nodes.rbegin(); it != tape.nodes.rend(); ++it) {
        Node* n = *it;
        if (n->backward && n->has_grad()) n->backward(*n);
    }
    root.consumed = true;
}

}  // namespace dcpl::ad
