#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "texstat/common.hpp"

namespace texstat {

// Dense row-major tensor. The handle has shared-storage copy semantics so
// the same buffer can sit in a parameter map, a module struct, and a tape
// closure at once. Canonical image layout is channels x height x width with
// an optional leading batch extent; a scalar has an empty shape.
//
// The element type is fixed at construction: float for training, double for
// gradient-check work.
template <typename T>
class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

    static Tensor full(Shape shape, T value) {
        Tensor t(std::move(shape));
        std::fill(t.storage_->values.begin(), t.storage_->values.end(), value);
        return t;
    }

    static Tensor from_values(Shape shape, std::vector<T> values) {
        Tensor t(std::move(shape));
        if (static_cast<std::int64_t>(values.size()) != t.numel())
            throw ShapeError("value count " + std::to_string(values.size()) +
                             " does not match shape " + shape_str(t.shape()));
        t.storage_->values = std::move(values);
        return t;
    }

    static Tensor scalar(T value) { return from_values({}, {value}); }

    // Leaf with requires_grad set; the usual way to make a parameter.
    static Tensor param(Shape shape) {
        Tensor t(std::move(shape));
        t.set_requires_grad(true);
        return t;
    }

    static Tensor uniform(Shape shape, T lo, T hi, std::mt19937_64& rng) {
        Tensor t(std::move(shape));
        std::uniform_real_distribution<T> dist(lo, hi);
        for (auto& v : t.storage_->values) v = dist(rng);
        return t;
    }

    bool defined() const { return storage_ != nullptr; }
    const Shape& shape() const { return storage_->shape; }
    std::int64_t numel() const { return static_cast<std::int64_t>(storage_->values.size()); }
    std::int64_t rank() const { return static_cast<std::int64_t>(storage_->shape.size()); }
    std::int64_t dim(std::int64_t i) const { return storage_->shape[static_cast<std::size_t>(i)]; }

    std::span<T> values() { return storage_->values; }
    std::span<const T> values() const { return storage_->values; }
    T* data() { return storage_->values.data(); }
    const T* data() const { return storage_->values.data(); }

    bool requires_grad() const { return storage_->requires_grad; }
    void set_requires_grad(bool b) {
        storage_->requires_grad = b;
        if (b) ensure_grad();
    }

    // Gradient buffer; valid only when requires_grad.
    std::span<T> grad() { return storage_->grad; }
    std::span<const T> grad() const { return storage_->grad; }
    void zero_grad() { std::fill(storage_->grad.begin(), storage_->grad.end(), T(0)); }

    T item() const {
        if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
        return storage_->values[0];
    }

    T at(std::initializer_list<std::int64_t> idx) const { return storage_->values[offset_of(idx)]; }
    T& at(std::initializer_list<std::int64_t> idx) { return storage_->values[offset_of(idx)]; }

    // Identity of the underlying buffer; used by the tape and by tests that
    // assert two handles alias.
    const void* id() const { return storage_.get(); }

  private:
    struct Storage {
        Shape shape;
        std::vector<T> values;
        std::vector<T> grad;
        bool requires_grad = false;
    };

    explicit Tensor(Shape shape) : storage_(std::make_shared<Storage>()) {
        storage_->shape = std::move(shape);
        storage_->values.assign(static_cast<std::size_t>(shape_numel(storage_->shape)), T(0));
    }

    void ensure_grad() {
        if (storage_->grad.size() != storage_->values.size())
            storage_->grad.assign(storage_->values.size(), T(0));
    }

    std::size_t offset_of(std::initializer_list<std::int64_t> idx) const {
        const Shape& s = storage_->shape;
        if (idx.size() != s.size()) throw ShapeError("index rank mismatch");
        std::size_t off = 0;
        std::size_t d = 0;
        for (auto i : idx) {
            off = off * static_cast<std::size_t>(s[d]) + static_cast<std::size_t>(i);
            ++d;
        }
        return off;
    }

    std::shared_ptr<Storage> storage_;
};

// Reverse-mode tape: an append-only record of executed differentiable ops.
// Construction order is topological by definition (an op can only consume
// existing tensors), and backward() walks it exactly once in reverse.
// Single-owner: one tape is active per thread at a time, via TapeScope.
template <typename T>
class Tape {
  public:
    void record(std::function<void()> backward_fn) {
        entries_.push_back(std::move(backward_fn));
    }

    // Seeds d(loss)/d(loss) = 1 and accumulates into every requires_grad
    // leaf. Grads are += accumulated; call zero_grad on leaves between
    // uses if accumulation is not wanted.
    void backward(Tensor<T> loss) {
        if (!loss.defined() || loss.numel() != 1)
            throw ShapeError("backward requires a scalar loss");
        if (!loss.requires_grad())
            throw ShapeError("backward on a tensor detached from the tape");
        loss.grad()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    }

    std::size_t size() const { return entries_.size(); }

  private:
    std::vector<std::function<void()>> entries_;
};

template <typename T>
Tape<T>*& active_tape_slot() {
    thread_local Tape<T>* slot = nullptr;
    return slot;
}

template <typename T>
Tape<T>* active_tape() {
    return active_tape_slot<T>();
}

// RAII activation of a tape on the current thread.
template <typename T>
class TapeScope {
  public:
    explicit TapeScope(Tape<T>& tape) : prev_(active_tape_slot<T>()) {
        active_tape_slot<T>() = &tape;
    }
    ~TapeScope() { active_tape_slot<T>() = prev_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

  private:
    Tape<T>* prev_;
};

}  // namespace texstat
