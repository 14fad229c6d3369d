#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "almond/nn/layers.hpp"

namespace almond::nn {

// A fixed stack of layers over per-sample input shape H,W,C.
template <typename T>
class Sequential {
public:
  Sequential(std::vector<LayerSpec> specs, Shape input, std::uint64_t seed)
      : specs_(std::move(specs)), input_(std::move(input)), seed_(seed) {
    Shape shape = input_;
    for (std::size_t i = 0; i < specs_.size(); ++i) {
      layers_.push_back(make_layer<T>(specs_[i], shape, seed_, static_cast<int>(i)));
      shape = layers_.back()->output_shape();
    }
    output_ = shape;
  }

  Sequential(Sequential&&) noexcept = default;
  Sequential& operator=(Sequential&&) noexcept = default;

  const std::vector<LayerSpec>& specs() const { return specs_; }
  const Shape& input_shape() const { return input_; }
  const Shape& output_shape() const { return output_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t layer_count() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_.at(i); }

  bool ends_with_softmax() const { return !specs_.empty() && specs_.back().kind == LayerKind::softmax; }

  // Full stack, including a trailing softmax.
  Tensor<T> forward(const Tensor<T>& x, Mode mode) { return run(x, mode, layers_.size()); }

  // Stops before a trailing softmax; training feeds these to the fused loss.
  Tensor<T> logits(const Tensor<T>& x, Mode mode) {
    return run(x, mode, layers_.size() - (ends_with_softmax() ? 1 : 0));
  }

  // Reverse pass from dL/dlogits; gradients accumulate into each Param::grad.
  void backward(const Tensor<T>& dlogits) {
    Tensor<T> g = dlogits;
    const std::size_t top = layers_.size() - (ends_with_softmax() ? 1 : 0);
    for (std::size_t i = top; i-- > 0;) g = layers_[i]->backward(g);
  }

  // Every parameter in layer order; running statistics have learnable == false.
  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_) {
      for (Param<T>* p : l->params()) out.push_back(p);
    }
    return out;
  }

  std::vector<Param<T>*> learnable_parameters() {
    std::vector<Param<T>*> out;
    for (Param<T>* p : parameters()) {
      if (p->learnable) out.push_back(p);
    }
    return out;
  }

  void zero_grad() {
    for (Param<T>* p : parameters()) p->grad.fill(T(0));
  }

  void set_dropout_enabled(bool on) {
    for (auto& l : layers_) l->set_dropout_enabled(on);
  }

  std::uint64_t switch_signature() const {
    std::uint64_t h = 0;
    for (const auto& l : layers_) h = detail::mix(h, l->switch_signature());
    return h;
  }

  // Same architecture in another precision with parameters converted.
  template <typename U>
  Sequential<U> cast() const {
    Sequential<U> out(specs_, input_, seed_);
    auto src = const_cast<Sequential*>(this)->parameters();
    auto dst = out.parameters();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i]->value = src[i]->value.template cast<U>();
    return out;
  }

private:
  Tensor<T> run(const Tensor<T>& x, Mode mode, std::size_t count) {
    if (x.rank() < 1 || per_sample(x.shape()) != input_) {
      throw ShapeMismatch("model expects per-sample input " + shape_str(input_) + ", got " + shape_str(x.shape()));
    }
    Tensor<T> h = x;
    for (std::size_t i = 0; i < count; ++i) h = layers_[i]->forward(h, mode);
    return h;
  }

  std::vector<LayerSpec> specs_;
  Shape input_;
  Shape output_;
  std::uint64_t seed_ = 0;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

}  // namespace almond::nn
