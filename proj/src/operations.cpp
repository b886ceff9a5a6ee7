#include "nasood/operations.hpp"

#include <string>

#include "nasood/errors.hpp"

namespace nasood {

namespace nn = torch::nn;

namespace {

constexpr std::array<std::string_view, kNumOperations> kOperationNames{
    "none", "max_pool_3x3", "avg_pool_3x3", "skip_connect", "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
};

nn::BatchNorm2d make_bn(int64_t channels, OpNorm norm) {
  return nn::BatchNorm2d(
      nn::BatchNorm2dOptions(channels).affine(norm.affine).track_running_stats(norm.track_running_stats));
}

}  // namespace

std::string_view operation_name(OperationKind op) {
  const int idx = op_index(op);
  if (idx < 0 || idx >= kNumOperations) throw ValidationError("operation index out of range: " + std::to_string(idx));
  return kOperationNames[idx];
}

OperationKind parse_operation(std::string_view name) {
  for (int i = 0; i < kNumOperations; ++i) {
    if (kOperationNames[i] == name) return static_cast<OperationKind>(i);
  }
  throw ValidationError("unknown operation '" + std::string(name) + "'");
}

ReLUConvBNImpl::ReLUConvBNImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding,
                               OpNorm norm) {
  conv_ = register_module(
      "conv", nn::Conv2d(nn::Conv2dOptions(c_in, c_out, kernel).stride(stride).padding(padding).bias(false)));
  bn_ = register_module("bn", make_bn(c_out, norm));
}

torch::Tensor ReLUConvBNImpl::forward(const torch::Tensor& x) { return bn_(conv_(torch::relu(x))); }

DilConvImpl::DilConvImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding,
                         int64_t dilation, OpNorm norm) {
  depthwise_ = register_module("depthwise", nn::Conv2d(nn::Conv2dOptions(c_in, c_in, kernel)
                                                            .stride(stride)
                                                            .padding(padding)
                                                            .dilation(dilation)
                                                            .groups(c_in)
                                                            .bias(false)));
  pointwise_ = register_module("pointwise", nn::Conv2d(nn::Conv2dOptions(c_in, c_out, 1).bias(false)));
  bn_ = register_module("bn", make_bn(c_out, norm));
}

torch::Tensor DilConvImpl::forward(const torch::Tensor& x) {
  const auto& o = depthwise_->options;
  const auto h = torch::relu(x);
  const auto d = dilated_depthwise(h, depthwise_->weight, (*o.stride())[0], (*o.dilation())[0]);
  return bn_(pointwise_(d.defined() ? d : depthwise_(h)));
}

torch::Tensor dilated_depthwise(const torch::Tensor& x, const torch::Tensor& weight, int64_t stride, int64_t dilation) {
  namespace F = torch::nn::functional;
  const auto kernel = weight.size(-1);
  if (dilation != 2 || kernel % 2 == 0 || weight.size(-2) != kernel) return {};
  const auto n = x.size(0), c = x.size(1), height = x.size(2), width = x.size(3);
  const auto pad = (kernel - 1) / 2;
  const auto conv = F::Conv2dFuncOptions().padding(pad).groups(c);
  // A stride-2 output only reads the even subgrid, where the dilated kernel
  // becomes a dense one.
  if (stride == 2) return F::conv2d(x.slice(2, 0, height, 2).slice(3, 0, width, 2), weight, conv);
  // Stride 1: run the dense kernel on each of the four polyphase components.
  // Only worth it once the dilated padding covers half of the map.
  if (stride != 1 || height % 2 != 0 || width % 2 != 0 || 2 * (kernel - 1) < std::min(height, width)) return {};
  const auto phases = x.reshape({n, c, height / 2, 2, width / 2, 2})
                          .permute({0, 3, 5, 1, 2, 4})
                          .reshape({n * 4, c, height / 2, width / 2})
                          .contiguous(torch::MemoryFormat::ChannelsLast);
  return F::conv2d(phases, weight, conv)
      .reshape({n, 2, 2, c, height / 2, width / 2})
      .permute({0, 3, 4, 1, 5, 2})
      .reshape({n, c, height, width})
      .contiguous(torch::MemoryFormat::ChannelsLast);
}

SepConvImpl::SepConvImpl(int64_t c_in, int64_t c_out, int64_t kernel, int64_t stride, int64_t padding, OpNorm norm) {
  first_ = register_module("first", DilConv(c_in, c_in, kernel, stride, padding, 1, norm));
  second_ = register_module("second", DilConv(c_in, c_out, kernel, 1, padding, 1, norm));
}

torch::Tensor SepConvImpl::forward(const torch::Tensor& x) { return second_(first_(x)); }

FactorizedReduceImpl::FactorizedReduceImpl(int64_t c_in, int64_t c_out, OpNorm norm) {
  if (c_out % 2 != 0) throw InvalidParameterError("FactorizedReduce needs an even output channel count");
  conv_a_ = register_module("conv_a", nn::Conv2d(nn::Conv2dOptions(c_in, c_out / 2, 1).stride(2).bias(false)));
  conv_b_ = register_module("conv_b", nn::Conv2d(nn::Conv2dOptions(c_in, c_out / 2, 1).stride(2).bias(false)));
  bn_ = register_module("bn", make_bn(c_out, norm));
}

torch::Tensor FactorizedReduceImpl::forward(const torch::Tensor& x) {
  auto r = torch::relu(x);
  // Shift by one pixel; pad on the far edge so odd sizes still line up.
  auto shifted = torch::constant_pad_nd(r.slice(2, 1).slice(3, 1), {0, 1, 0, 1});
  return bn_(torch::cat({conv_a_(r), conv_b_(shifted)}, 1));
}

torch::Tensor ZeroImpl::forward(const torch::Tensor& x) {
  if (stride_ == 1) return x.mul(0.0);
  using torch::indexing::Slice;
  return x.index({Slice(), Slice(), Slice(torch::indexing::None, torch::indexing::None, stride_),
                  Slice(torch::indexing::None, torch::indexing::None, stride_)})
      .mul(0.0);
}

PoolOpImpl::PoolOpImpl(bool max_pool, int64_t stride) : max_pool_(max_pool), stride_(stride) {}

torch::Tensor PoolOpImpl::forward(const torch::Tensor& x) {
  namespace F = torch::nn::functional;
  // Both pools are written for speed on small CPU tensors: libtorch's NCHW
  // pooling kernels are several times slower than the alternatives below.
  if (max_pool_) {
    const auto pooled = F::max_pool2d(x.contiguous(torch::MemoryFormat::ChannelsLast),
                                      F::MaxPool2dFuncOptions(3).stride(stride_).padding(1));
    return pooled.contiguous(x.suggest_memory_format());
  }
  // Average without padded cells: a ones depthwise kernel divided by the
  // number of in-bounds taps.
  const auto channels = x.size(1);
  const auto kernel = torch::ones({channels, 1, 3, 3}, x.options());
  const auto sums = F::conv2d(x, kernel, F::Conv2dFuncOptions().stride(stride_).padding(1).groups(channels));
  const auto counts = F::conv2d(torch::ones({1, 1, x.size(2), x.size(3)}, x.options()), kernel.narrow(0, 0, 1),
                                F::Conv2dFuncOptions().stride(stride_).padding(1));
  return sums / counts;
}

nn::AnyModule make_operation(OperationKind op, int64_t channels, int64_t stride, OpNorm norm) {
  switch (op) {
    case OperationKind::kNone:
      return nn::AnyModule(Zero(stride));
    case OperationKind::kMaxPool3x3:
      return nn::AnyModule(PoolOp(true, stride));
    case OperationKind::kAvgPool3x3:
      return nn::AnyModule(PoolOp(false, stride));
    case OperationKind::kSkipConnect:
      if (stride == 1) return nn::AnyModule(IdentityOp());
      return nn::AnyModule(FactorizedReduce(channels, channels, norm));
    case OperationKind::kSepConv3x3:
      return nn::AnyModule(SepConv(channels, channels, 3, stride, 1, norm));
    case OperationKind::kSepConv5x5:
      return nn::AnyModule(SepConv(channels, channels, 5, stride, 2, norm));
    case OperationKind::kDilConv3x3:
      return nn::AnyModule(DilConv(channels, channels, 3, stride, 2, 2, norm));
    case OperationKind::kDilConv5x5:
      return nn::AnyModule(DilConv(channels, channels, 5, stride, 4, 2, norm));
  }
  throw ValidationError("unknown operation kind");
}

}  // namespace nasood
