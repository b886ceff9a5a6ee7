#include "nasood/evaluation.hpp"

namespace nasood {

double evaluate(const std::function<torch::Tensor(const torch::Tensor&)>& net, const MultiDomainDataset& split,
                int64_t batch_size) {
  const int64_t n = split.size();
  if (n == 0) return 0.0;
  torch::NoGradGuard no_grad;
  int64_t correct = 0;
  for (int64_t start = 0; start < n; start += batch_size) {
    const int64_t len = std::min(batch_size, n - start);
    auto logits = net(split.images.narrow(0, start, len));
    auto pred = logits.argmax(1);
    correct += pred.eq(split.class_labels.narrow(0, start, len)).sum().item<int64_t>();
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace nasood
