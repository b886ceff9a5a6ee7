#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string_view>

namespace nasood {

/// Candidate operations on a cell edge. The numeric value is the column index
/// in every alpha matrix and flattened alpha export; do not reorder.
enum class OperationKind : int {
  kNone = 0,
  kMaxPool3x3 = 1,
  kAvgPool3x3 = 2,
  kSkipConnect = 3,
  kSepConv3x3 = 4,
  kSepConv5x5 = 5,
  kDilConv3x3 = 6,
  kDilConv5x5 = 7,
};

inline constexpr int kNumOperations = 8;

inline constexpr std::array<OperationKind, kNumOperations> kAllOperations{
    OperationKind::kNone,        OperationKind::kMaxPool3x3, OperationKind::kAvgPool3x3,
    OperationKind::kSkipConnect, OperationKind::kSepConv3x3, OperationKind::kSepConv5x5,
    OperationKind::kDilConv3x3,  OperationKind::kDilConv5x5,
};

constexpr int op_index(OperationKind op) { return static_cast<int>(op); }

std::string_view operation_name(OperationKind op);

/// Inverse of operation_name. Throws ValidationError on an unknown name.
OperationKind parse_operation(std::string_view name);

/// Normalization behaviour shared by every conv-bearing operation.
struct OpNorm {
  bool affine = true;
  bool track_running_stats = true;
};

// Building blocks. All of them keep the spatial size for stride 1 and halve
// it (rounding up) for stride 2.

class ReLUConvBNImpl : public torch::nn::Module {
 public:
  ReLUConvBNImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding, OpNorm norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(ReLUConvBN);

class DilConvImpl : public torch::nn::Module {
 public:
  DilConvImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding, int64_t dilation,
              OpNorm norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d depthwise_{nullptr};
  torch::nn::Conv2d pointwise_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(DilConv);

/// Same-padded depthwise convolution with dilation 2, rewritten onto dense
/// kernels (even subgrid for stride 2, polyphase split for stride 1). Returns
/// an undefined tensor when the rewrite does not apply or would not pay off;
/// callers then use the plain convolution.
torch::Tensor dilated_depthwise(const torch::Tensor& x, const torch::Tensor& weight, int64_t stride, int64_t dilation);

/// Two stacked depthwise-separable convolutions; only the first one strides.
class SepConvImpl : public torch::nn::Module {
 public:
  SepConvImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding, OpNorm norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  DilConv first_{nullptr};
  DilConv second_{nullptr};
};
TORCH_MODULE(SepConv);

/// Stride-2 1x1 reduction built from two offset convolutions whose outputs are
/// concatenated, so no input pixel is skipped.
class FactorizedReduceImpl : public torch::nn::Module {
 public:
  FactorizedReduceImpl(int64_t c_in, int64_t c_out, OpNorm norm);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv_a_{nullptr};
  torch::nn::Conv2d conv_b_{nullptr};
  torch::nn::BatchNorm2d bn_{nullptr};
};
TORCH_MODULE(FactorizedReduce);

class ZeroImpl : public torch::nn::Module {
 public:
  explicit ZeroImpl(int64_t stride) : stride_(stride) {}
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int64_t stride_;
};
TORCH_MODULE(Zero);

class IdentityOpImpl : public torch::nn::Module {
 public:
  torch::Tensor forward(const torch::Tensor& x) { return x; }
};
TORCH_MODULE(IdentityOp);

class PoolOpImpl : public torch::nn::Module {
 public:
  PoolOpImpl(bool max_pool, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  bool max_pool_;
  int64_t stride_;
};
TORCH_MODULE(PoolOp);

/// Instantiates one candidate operation with `channels` in and out.
torch::nn::AnyModule make_operation(OperationKind op, int64_t channels, int64_t stride, OpNorm norm);

}  // namespace nasood
