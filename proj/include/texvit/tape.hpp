#pragma once

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "texvit/rng.hpp"
#include "texvit/tensor.hpp"

namespace texvit {

// Named trainable parameters plus non-trainable buffers (norm running stats).
// Gradient accumulators mirror parameter shapes and are zeroed explicitly.
template <typename T>
class ParamStore {
public:
    Tensor<T>& create(const std::string& name, Shape shape) {
        if (values_.count(name)) throw ContractError("parameter already exists: " + name);
        order_.push_back(name);
        return values_.emplace(name, Tensor<T>(std::move(shape))).first->second;
    }

    Tensor<T>& create_buffer(const std::string& name, Shape shape) {
        if (buffers_.count(name)) throw ContractError("buffer already exists: " + name);
        buffer_order_.push_back(name);
        return buffers_.emplace(name, Tensor<T>(std::move(shape))).first->second;
    }

    bool has(const std::string& name) const { return values_.count(name) != 0; }
    bool has_buffer(const std::string& name) const { return buffers_.count(name) != 0; }

    Tensor<T>& value(const std::string& name) {
        auto it = values_.find(name);
        if (it == values_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }
    const Tensor<T>& value(const std::string& name) const {
        auto it = values_.find(name);
        if (it == values_.end()) throw ContractError("unknown parameter: " + name);
        return it->second;
    }

    Tensor<T>& buffer(const std::string& name) {
        auto it = buffers_.find(name);
        if (it == buffers_.end()) throw ContractError("unknown buffer: " + name);
        return it->second;
    }
    const Tensor<T>& buffer(const std::string& name) const {
        auto it = buffers_.find(name);
        if (it == buffers_.end()) throw ContractError("unknown buffer: " + name);
        return it->second;
    }

    // Gradient accumulator, allocated as zeros on first access.
    Tensor<T>& grad(const std::string& name) {
        auto it = grads_.find(name);
        if (it != grads_.end()) return it->second;
        return grads_.emplace(name, Tensor<T>(value(name).shape())).first->second;
    }

    void zero_grads() {
        for (auto& [name, g] : grads_) g.fill(T(0));
    }

    // Insertion order; all iteration in training and serialization follows it.
    const std::vector<std::string>& names() const { return order_; }
    const std::vector<std::string>& buffer_names() const { return buffer_order_; }

    int64_t total_parameters() const {
        int64_t n = 0;
        for (const auto& name : order_) n += values_.at(name).numel();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        for (const auto& name : order_) out.create(name, values_.at(name).shape());
        for (const auto& name : order_) out.value(name) = values_.at(name).template cast<U>();
        for (const auto& name : buffer_order_) out.create_buffer(name, buffers_.at(name).shape());
        for (const auto& name : buffer_order_)
            out.buffer(name) = buffers_.at(name).template cast<U>();
        return out;
    }

private:
    std::vector<std::string> order_;
    std::vector<std::string> buffer_order_;
    std::unordered_map<std::string, Tensor<T>> values_;
    std::unordered_map<std::string, Tensor<T>> grads_;
    std::unordered_map<std::string, Tensor<T>> buffers_;
};

// Append-only record of primitive applications. Node inputs always reference
// earlier nodes, so insertion order is a topological order and backward() is
// a single reverse sweep. A tape belongs to exactly one logical execution
// context; concurrent mutation of one tape is forbidden (kernels may still
// fan out internally).
template <typename T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    struct Node {
        Tensor<T> value;
        std::vector<int> parents;
        BackwardFn backward;
        bool requires_grad = false;
    };

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    int add_leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad && grad_enabled_;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int add_op(Tensor<T> value, std::vector<int> parents, BackwardFn backward) {
        Node n;
        n.value = std::move(value);
        for (int p : parents) {
            if (p < 0 || p >= static_cast<int>(nodes_.size()))
                throw ContractError("tape op references a node that does not exist yet");
            n.requires_grad = n.requires_grad || nodes_[static_cast<size_t>(p)].requires_grad;
        }
        n.parents = std::move(parents);
        if (n.requires_grad && grad_enabled_) n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    int size() const { return static_cast<int>(nodes_.size()); }

    const Tensor<T>& value(int id) const { return nodes_.at(static_cast<size_t>(id)).value; }
    const Node& node(int id) const { return nodes_.at(static_cast<size_t>(id)); }

    bool has_grad(int id) const {
        return id < static_cast<int>(grads_.size()) && !grads_[static_cast<size_t>(id)].empty();
    }

    Tensor<T>& grad(int id) {
        if (id >= static_cast<int>(grads_.size())) grads_.resize(static_cast<size_t>(id) + 1);
        auto& g = grads_[static_cast<size_t>(id)];
        if (g.empty()) g = Tensor<T>(nodes_[static_cast<size_t>(id)].value.shape());
        return g;
    }

    // Reverse-mode sweep from a scalar node. All gradient accumulators are
    // cleared first; nodes are visited in reverse insertion order.
    void backward(int loss_id) {
        if (!grad_enabled_) throw ContractError("backward() on a no-grad tape");
        const Node& loss = nodes_.at(static_cast<size_t>(loss_id));
        if (loss.value.numel() != 1)
            throw ContractError("backward() requires a scalar loss, got shape " +
                                shape_str(loss.value.shape()));
        grads_.clear();
        grads_.resize(nodes_.size());
        grad(loss_id)[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.requires_grad || !n.backward) continue;
            if (!has_grad(id)) continue;
            n.backward(*this, id);
        }
    }

private:
    // deque: references into the tape stay valid as ops append nodes
    std::deque<Node> nodes_;
    std::vector<Tensor<T>> grads_;
    bool grad_enabled_ = true;
};

// Handle to one tape node; the unit all graph-building ops work with.
template <typename T>
struct Var {
    Tape<T>* tape = nullptr;
    int id = -1;

    const Tensor<T>& val() const { return tape->value(id); }
    const Shape& shape() const { return tape->value(id).shape(); }
    int64_t dim(int i) const { return tape->value(id).dim(i); }
    int rank() const { return tape->value(id).rank(); }
};

// One forward pass: a tape, the parameter store backing it, and per-pass
// state (training mode, RNG for stochastic regularizers, activation taps for
// Grad-CAM, and the param-name -> leaf-node map used to collect gradients).
template <typename T>
struct Ctx {
    Ctx(Tape<T>& t, ParamStore<T>& s) : tape(t), store(s) {}

    Tape<T>& tape;
    ParamStore<T>& store;
    bool training = false;
    RngState* rng = nullptr;

    std::unordered_map<std::string, int> param_nodes;
    std::map<std::string, int> taps;

    Var<T> param(const std::string& name) {
        auto it = param_nodes.find(name);
        if (it != param_nodes.end()) return {&tape, it->second};
        int id = tape.add_leaf(store.value(name), true);
        param_nodes.emplace(name, id);
        return {&tape, id};
    }

    Var<T> input(Tensor<T> v, bool requires_grad = false) {
        return {&tape, tape.add_leaf(std::move(v), requires_grad)};
    }

    void tap(const std::string& name, Var<T> v) { taps[name] = v.id; }

    // Accumulate tape gradients into the store after backward().
    void collect_grads() {
        for (auto& [name, id] : param_nodes) {
            if (!tape.has_grad(id)) continue;
            Tensor<T>& dst = store.grad(name);
            const Tensor<T>& src = tape.grad(id);
            for (int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
        }
    }
};

} // namespace texvit
