// Copyright 2026 The modelab Authors
// SPDX-License-Identifier: Apache-2.0

#include "modelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

namespace modelab {
namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b)
    throw ShapeError(std::string(what) + ": frame sizes differ (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

std::vector<double> gaussian_1d() {
  std::vector<double> g(kWindow);
  const double c = (kWindow - 1) / 2.0;
  double s = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    double d = static_cast<double>(i) - c;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    s += g[i];
  }
  for (auto& v : g) v /= s;
  return g;
}

// Valid-mode separable filtering of a plane: (H-10) x (W-10) output.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t H, std::size_t W, const std::vector<double>& g) {
  const std::size_t oh = H - kWindow + 1, ow = W - kWindow + 1;
  std::vector<double> rows(H * ow);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * in[y * W + x + k];
      rows[y * ow + x] = s;
    }
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = s;
    }
  return out;
}

std::string convention_name(ErrorConvention c) { return c == ErrorConvention::kSum ? "sum" : "mean"; }

}  // namespace

double mse_frame(std::span<const double> pred, std::span<const double> target) {
  require_same(pred.size(), target.size(), "mse_frame");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    double d = pred[i] - target[i];
    s += d * d;
  }
  return s;
}

double mae_frame(std::span<const double> pred, std::span<const double> target) {
  require_same(pred.size(), target.size(), "mae_frame");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::fabs(pred[i] - target[i]);
  return s;
}

double mse_frame(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse_frame: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  return mse_frame(pred.data(), target.data());
}

double mae_frame(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mae_frame: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  return mae_frame(pred.data(), target.data());
}

Psnr psnr_frame(std::span<const double> pred, std::span<const double> target, double max_val) {
  double per_pixel = mse_frame(pred, target) / static_cast<double>(pred.size());
  if (per_pixel == 0.0) return {kPsnrCapDb, true};
  double db = 10.0 * std::log10(max_val * max_val / per_pixel);
  if (db > kPsnrCapDb) return {kPsnrCapDb, true};
  return {db, false};
}

Psnr psnr_frame(const Tensor& pred, const Tensor& target, double max_val) {
  if (pred.shape() != target.shape())
    throw ShapeError("psnr_frame: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  return psnr_frame(pred.data(), target.data(), max_val);
}

double ssim_plane(std::span<const double> a, std::span<const double> b, std::size_t H, std::size_t W) {
  require_same(a.size(), b.size(), "ssim");
  require_same(a.size(), H * W, "ssim");
  if (H < kWindow || W < kWindow)
    throw std::invalid_argument("ssim: frame " + std::to_string(H) + "x" + std::to_string(W) +
                                " smaller than the 11x11 window");
  static const std::vector<double> g = gaussian_1d();
  std::vector<double> x(a.begin(), a.end()), y(b.begin(), b.end());
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  auto mx = filter_valid(x, H, W, g), my = filter_valid(y, H, W, g);
  auto exx = filter_valid(xx, H, W, g), eyy = filter_valid(yy, H, W, g), exy = filter_valid(xy, H, W, g);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    const double num = (2.0 * mx[i] * my[i] + kC1) * (2.0 * sxy + kC2);
    const double den = (mx[i] * mx[i] + my[i] * my[i] + kC1) * (sxx + syy + kC2);
    total += num / den;
  }
  return total / static_cast<double>(mx.size());
}

double ssim_frame(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("ssim_frame: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
  if (pred.ndim() < 2) throw ShapeError("ssim_frame: need at least [H,W], got " + shape_str(pred.shape()));
  const std::size_t H = pred.dim(pred.ndim() - 2), W = pred.dim(pred.ndim() - 1);
  const std::size_t planes = pred.numel() / (H * W);
  double s = 0.0;
  for (std::size_t p = 0; p < planes; ++p)
    s += ssim_plane(pred.data().subspan(p * H * W, H * W), target.data().subspan(p * H * W, H * W), H, W);
  return s / static_cast<double>(planes);
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json MetricReport::to_json() const {
  return nlohmann::json{
      {"sequences", sequences},
      {"horizon", horizon},
      {"aggregate", {{"psnr", psnr_mean}, {"ssim", ssim_mean}, {"mse", mse_mean}, {"mae", mae_mean}}},
      {"per_step", {{"psnr", psnr}, {"ssim", ssim}, {"mse", mse}, {"mae", mae}}},
      {"psnr_capped_frames", psnr_capped_frames},
      {"conventions",
       {{"mse_mae", convention_name(error_convention) + " over pixels per frame, averaged over frames"},
        {"psnr", "10*log10(1/per-pixel-mean-squared-error), identical frames capped at 100 dB"},
        {"ssim", "11x11 gaussian window sigma 1.5, K1 0.01, K2 0.03, valid region"},
        {"prediction_clamp", "[0,1]"}}}};
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os << std::fixed;
  os << "step      PSNR     SSIM          MSE          MAE\n";
  for (std::size_t k = 0; k < horizon; ++k)
    os << std::setw(4) << k + 1 << std::setprecision(3) << std::setw(10) << psnr[k] << std::setprecision(4)
       << std::setw(9) << ssim[k] << std::setprecision(3) << std::setw(13) << mse[k] << std::setw(13) << mae[k] << '\n';
  os << " all" << std::setprecision(3) << std::setw(10) << psnr_mean << std::setprecision(4) << std::setw(9)
     << ssim_mean << std::setprecision(3) << std::setw(13) << mse_mean << std::setw(13) << mae_mean << '\n';
  os << "sequences: " << sequences << "  mse/mae: per-frame " << convention_name(error_convention)
     << "  psnr-capped frames: " << psnr_capped_frames << '\n';
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(17) << "step,psnr,ssim,mse,mae\n";
  for (std::size_t k = 0; k < horizon; ++k) os << k + 1 << ',' << psnr[k] << ',' << ssim[k] << ',' << mse[k] << ',' << mae[k] << '\n';
  return os.str();
}

MetricReport evaluate_predictor(const SequenceStore& store, const Predictor& predictor, const EvalConfig& cfg) {
  if (cfg.batch_size == 0) throw std::invalid_argument("eval batch_size must be at least 1");
  MetricReport r;
  r.error_convention = cfg.error_convention;
  r.horizon = store.pred_len();
  r.sequences = store.count();
  if (r.horizon == 0) throw std::invalid_argument("store has no prediction frames");
  r.psnr.assign(r.horizon, 0.0);
  r.ssim.assign(r.horizon, 0.0);
  r.mse.assign(r.horizon, 0.0);
  r.mae.assign(r.horizon, 0.0);
  const std::size_t T = store.input_len, F = store.frame_size();
  const double norm = cfg.error_convention == ErrorConvention::kSum ? 1.0 : static_cast<double>(F);

  for (std::size_t start = 0; start < store.count(); start += cfg.batch_size) {
    std::vector<std::size_t> idx;
    for (std::size_t i = start; i < std::min(store.count(), start + cfg.batch_size); ++i) idx.push_back(i);
    SequenceBatch full = make_batch(store, idx);
    SequenceBatch observed = full;
    {
      std::vector<double> hidden(full.frames.data().begin(), full.frames.data().end());
      for (std::size_t b = 0; b < idx.size(); ++b)
        std::fill_n(hidden.begin() + static_cast<long>((b * store.seq_len + T) * F), r.horizon * F,
                    std::numeric_limits<double>::quiet_NaN());
      observed.frames = Tensor::from_data(full.frames.shape(), std::move(hidden));
    }
    Tensor pred = predictor(observed);
    const Shape want{idx.size(), r.horizon, store.channels, store.height, store.width};
    if (pred.shape() != want)
      throw ShapeError("predictor returned " + shape_str(pred.shape()) + ", expected " + shape_str(want));
    Tensor pc = clamped(pred);
    auto pd = pc.data();
    auto td = full.frames.data();
    for (std::size_t b = 0; b < idx.size(); ++b)
      for (std::size_t k = 0; k < r.horizon; ++k) {
        auto p = pd.subspan((b * r.horizon + k) * F, F);
        auto t = td.subspan((b * store.seq_len + T + k) * F, F);
        r.mse[k] += mse_frame(p, t) / norm;
        r.mae[k] += mae_frame(p, t) / norm;
        Psnr ps = psnr_frame(p, t);
        r.psnr[k] += ps.db;
        r.psnr_capped_frames += ps.capped;
        Tensor pt = Tensor::from_data({store.channels, store.height, store.width}, {p.begin(), p.end()});
        Tensor tt = Tensor::from_data({store.channels, store.height, store.width}, {t.begin(), t.end()});
        r.ssim[k] += ssim_frame(pt, tt);
      }
  }
  if (r.sequences == 0) return r;
  const double n = static_cast<double>(r.sequences);
  for (std::size_t k = 0; k < r.horizon; ++k) {
    r.psnr[k] /= n;
    r.ssim[k] /= n;
    r.mse[k] /= n;
    r.mae[k] /= n;
    r.psnr_mean += r.psnr[k];
    r.ssim_mean += r.ssim[k];
    r.mse_mean += r.mse[k];
    r.mae_mean += r.mae[k];
  }
  const double h = static_cast<double>(r.horizon);
  r.psnr_mean /= h;
  r.ssim_mean /= h;
  r.mse_mean /= h;
  r.mae_mean /= h;
  return r;
}

MetricReport evaluate(const Model& model, const SequenceStore& store, const EvalConfig& cfg) {
  const auto& c = model.config();
  if (store.input_len != c.input_len || store.pred_len() != c.pred_len)
    throw std::invalid_argument("store split " + std::to_string(store.input_len) + "+" +
                                std::to_string(store.pred_len()) + " does not match model " +
                                std::to_string(c.input_len) + "+" + std::to_string(c.pred_len));
  return evaluate_predictor(
      store,
      [&](const SequenceBatch& observed) {
        NoGradGuard guard;
        return forward_sequence(model, observed, {}).predictions();
      },
      cfg);
}

}  // namespace modelab
