#include "matex/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "matex/error.hpp"
#include "matex/kernels.hpp"

namespace matex {

const char* to_string(MapKind k) noexcept {
  switch (k) {
    case MapKind::Grad: return "grad";
    case MapKind::Flow: return "flow";
    case MapKind::Consistency: return "consistency";
    case MapKind::Fused: return "fused";
    case MapKind::PriorModulated: return "prior-modulated";
    case MapKind::External: return "external";
  }
  return "unknown";
}

void FusionWeights::validate() const {
  for (double v : {alpha, beta, gamma, delta})
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::InvalidArgument, "fusion weights must be finite and non-negative");
  if (!std::isfinite(tau)) throw Error(ErrorCode::InvalidArgument, "tau must be finite");
  if (!free_weights && std::abs(alpha + beta + delta - kFixedWeightSum) > 1e-9) {
    std::ostringstream ss;
    ss << "alpha + beta + delta = " << alpha + beta + delta << ", expected 0.9 (pass free_weights to override)";
    throw Error(ErrorCode::InvalidArgument, ss.str());
  }
}

std::vector<double> layer_weights(std::size_t layers, double tau) {
  if (layers == 0) throw Error(ErrorCode::InvalidArgument, "layer count must be >= 1");
  const double top = std::max(tau * 1.0, tau * static_cast<double>(layers));
  std::vector<double> w(layers);
  double total = 0.0;
  for (std::size_t l = 0; l < layers; ++l) {
    w[l] = std::exp(tau * static_cast<double>(l + 1) - top);
    total += w[l];
  }
  for (double& v : w) v /= total;
  return w;
}

std::vector<double> minmax_normalize(const std::vector<double>& values) {
  if (values.empty()) return {};
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<double> out(values.size(), 0.0);
  if (!(hi > lo)) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) out[i] = (values[i] - lo) / range;
  return out;
}

Grid minmax_normalize(const Grid& grid) { return Grid(grid.rows, grid.cols, minmax_normalize(grid.values)); }

namespace {

void require_attention(const IntermediatesBundle& b) {
  const std::size_t L = b.n_layers, N = b.grid.count();
  if (L == 0 || N == 0 || b.attn_cls.shape != std::vector<std::size_t>{L, N} || b.attn_cls.data.size() != L * N)
    throw Error(ErrorCode::DimensionMismatch, "attn_cls must be [n_layers, h_patches*w_patches]");
}

void require_gradients(const IntermediatesBundle& b) {
  const std::size_t N = b.grid.count(), C = b.channel_dim;
  const std::vector<std::size_t> nc{N, C};
  if (N == 0 || C == 0 || b.patch_embed.shape != nc || b.grad_patch_embed.shape != nc ||
      b.patch_embed.data.size() != N * C || b.grad_patch_embed.data.size() != N * C)
    throw Error(ErrorCode::DimensionMismatch, "patch_embed and grad_patch_embed must be [N, channel_dim]");
}

}  // namespace

AttributionMap attention_flow(const IntermediatesBundle& b, double tau, bool use_value_weighting) {
  require_attention(b);
  const std::size_t L = b.n_layers, N = b.grid.count();
  const auto weights = layer_weights(L, tau);

  std::vector<float> weighted;
  std::span<const float> rows = b.attn_cls.data;
  if (use_value_weighting) {
    if (!b.value_norms) throw Error(ErrorCode::ValueNormsMissing, "value weighting requested but value_norms is absent");
    if (b.value_norms->data.size() != L * N)
      throw Error(ErrorCode::DimensionMismatch, "value_norms must be [n_layers, N]");
    weighted.resize(L * N);
    for (std::size_t l = 0; l < L; ++l) {
      double sum = 0.0;
      for (std::size_t i = 0; i < N; ++i) {
        const double v = static_cast<double>(b.attn_cls.data[l * N + i]) * b.value_norms->data[l * N + i];
        weighted[l * N + i] = static_cast<float>(v);
        sum += v;
      }
      if (sum > 0.0)
        for (std::size_t i = 0; i < N; ++i)
          weighted[l * N + i] = static_cast<float>(weighted[l * N + i] / sum);
    }
    rows = weighted;
  }

  Grid raw(b.grid.h_patches, b.grid.w_patches);
  kernels::omp::weighted_layer_sum(rows, weights, N, raw.span());
  return {minmax_normalize(raw), MapKind::Flow, Resolution::Patch};
}

AttributionMap consistency_map(const IntermediatesBundle& b) {
  require_attention(b);
  Grid sigma(b.grid.h_patches, b.grid.w_patches);
  kernels::omp::layer_std(b.attn_cls.data, b.n_layers, b.grid.count(), sigma.span());
  for (double& v : sigma.values) v = 1.0 / (1.0 + v);
  return {std::move(sigma), MapKind::Consistency, Resolution::Patch};
}

AttributionMap gradient_attribution(const IntermediatesBundle& b) {
  require_gradients(b);
  Grid raw(b.grid.h_patches, b.grid.w_patches);
  kernels::omp::grad_times_activation(b.grad_patch_embed.data, b.patch_embed.data, b.grid.count(), b.channel_dim,
                                      raw.span());
  return {minmax_normalize(raw), MapKind::Grad, Resolution::Patch};
}

AttributionMap fuse(const AttributionMap& a_grad, const AttributionMap& a_flow, const AttributionMap& c_map,
                    const SpatialPriorMap& prior, const FusionWeights& w) {
  w.validate();
  const Grid& g = a_grad.grid;
  if (!g.same_shape(a_flow.grid) || !g.same_shape(c_map.grid) || !g.same_shape(prior.grid))
    throw Error(ErrorCode::DimensionMismatch, "fusion inputs must share the patch grid");
  Grid out(g.rows, g.cols);
  kernels::omp::fuse(g.values, a_flow.grid.values, c_map.grid.values, prior.grid.values,
                     {w.alpha, w.beta, w.gamma, w.delta}, out.span());
  return {minmax_normalize(out), MapKind::Fused, Resolution::Patch};
}

TokenRelevance token_relevance(const IntermediatesBundle& b, double tau) {
  if (!b.has_text()) throw Error(ErrorCode::TextTensorsMissing, "bundle has no text-branch tensors");
  const auto& tokens = *b.tokens;
  const std::size_t T = tokens.size(), L = b.n_layers;
  const Tensor& attn = *b.attn_eos_text;
  const Tensor& grad = *b.grad_token_embed;
  if (attn.shape != std::vector<std::size_t>{L, T} || grad.rank() != 2 || grad.shape[0] != T)
    throw Error(ErrorCode::DimensionMismatch, "text tensors disagree with the token list");

  std::vector<double> flow(T), grad_score(T);
  kernels::omp::weighted_layer_sum(attn.data, layer_weights(L, tau), T, flow);
  // Token embeddings are not exported, so the gradient magnitude stands in for grad x activation.
  kernels::omp::abs_row_sum(grad.data, T, grad.shape[1], grad_score);

  const auto flow_n = minmax_normalize(flow);
  const auto grad_n = minmax_normalize(grad_score);
  std::vector<double> combined(T);
  for (std::size_t t = 0; t < T; ++t) combined[t] = 0.5 * flow_n[t] + 0.5 * grad_n[t];
  return {tokens, minmax_normalize(combined)};
}

Grid resize_bilinear(const Grid& grid, std::size_t target_h, std::size_t target_w) {
  if (grid.rows == 0 || grid.cols == 0 || target_h == 0 || target_w == 0)
    throw Error(ErrorCode::InvalidArgument, "resize needs non-empty source and target");
  Grid out(target_h, target_w);
  kernels::omp::resize_bilinear(grid.values, grid.rows, grid.cols, out.span(), target_h, target_w);
  return out;
}

Grid upsample_bilinear(const Grid& grid, std::size_t target_h, std::size_t target_w) {
  if (target_h < grid.rows || target_w < grid.cols)
    throw Error(ErrorCode::InvalidArgument, "upsample target must be at least the source size");
  return resize_bilinear(grid, target_h, target_w);
}

Explanation explain(const IntermediatesBundle& bundle, const std::string& report_text, const ExplainOptions& opts) {
  opts.weights.validate();
  const auto findings = validate_bundle(bundle);
  for (const auto& f : findings)
    if (f.severity == Severity::Error) throw Error(ErrorCode::InvalidArgument, "invalid bundle: " + f.message);

  const Lexicon& lexicon = opts.lexicon ? *opts.lexicon : Lexicon::builtin();
  Explanation ex;
  ex.regions = parse_regions(report_text, lexicon);
  ex.prior = build_prior(ex.regions, opts.lambda_s, bundle.grid.h_patches, bundle.grid.w_patches);
  ex.flow = attention_flow(bundle, opts.weights.tau, opts.value_weighting);
  ex.consistency = consistency_map(bundle);
  ex.grad = gradient_attribution(bundle);
  ex.fused_patch = fuse(ex.grad, ex.flow, ex.consistency, ex.prior, opts.weights);

  const std::size_t H = bundle.image.height_px ? bundle.image.height_px : bundle.grid.h_patches;
  const std::size_t W = bundle.image.width_px ? bundle.image.width_px : bundle.grid.w_patches;
  ex.fused_pixel = {resize_bilinear(ex.fused_patch.grid, H, W), MapKind::Fused, Resolution::Pixel};
  if (bundle.has_text()) ex.tokens = token_relevance(bundle, opts.weights.tau);
  return ex;
}

}  // namespace matex
