#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace almond::nn {

// Activations are N,H,W,C row-major. Shapes below exclude the batch axis.
using Shape = std::vector<int>;

std::string shape_str(const Shape& s);

enum class LayerKind { conv2d, maxpool2d, spatial_dropout, dropout, flatten, dense, batchnorm, relu, softmax };
enum class Padding { same, valid };
enum class Mode { train, infer };

std::string_view kind_name(LayerKind kind);
LayerKind parse_kind(std::string_view name);

struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  // conv2d
  int filters = 0;
  int kernel_h = 3, kernel_w = 3;
  int stride = 1;
  Padding padding = Padding::same;
  // maxpool2d; pool_stride 0 means "same as pool"
  int pool = 2;
  int pool_stride = 0;
  // dropout variants
  double rate = 0.0;
  // dense
  int units = 0;
  // batchnorm
  double epsilon = 1e-3;
  double momentum = 0.99;

  static LayerSpec conv(int filters, int kernel = 3, int stride = 1, Padding padding = Padding::same);
  static LayerSpec maxpool(int pool, int stride = 0);
  static LayerSpec spatial_dropout(double rate);
  static LayerSpec dropout(double rate);
  static LayerSpec flatten();
  static LayerSpec dense(int units);
  static LayerSpec batchnorm(double epsilon = 1e-3, double momentum = 0.99);
  static LayerSpec relu();
  static LayerSpec softmax();

  int effective_pool_stride() const { return pool_stride > 0 ? pool_stride : pool; }
  // Throws InvalidLayer when kind-specific parameters are out of range.
  void validate() const;
  std::string describe() const;

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample output shape. Throws ShapeMismatch for rank/size errors and
// ShapeUnderflow when a pooling window no longer fits.
Shape output_shape(const LayerSpec& spec, const Shape& input);

struct ParamCounts {
  long long learnable = 0;
  long long non_learnable = 0;  // batchnorm running statistics
};
ParamCounts param_counts(const LayerSpec& spec, const Shape& input);

// Output spatial size of a same/valid convolution along one axis.
int conv_out_size(int in, int kernel, int stride, Padding padding);
// Leading (top/left) zero padding for same convolution; the odd remainder goes bottom/right.
int same_pad_before(int in, int kernel, int stride);
int pool_out_size(int in, int pool, int stride);

}  // namespace almond::nn
