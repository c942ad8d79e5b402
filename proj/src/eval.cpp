#include "cmota/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

#include "cmota/diag.hpp"
#include "cmota/vocab.hpp"

namespace cmota::metrics {

double char_f1(const std::vector<world::SceneSpec>& detected, const std::vector<world::SceneSpec>& expected,
               int n_characters, std::vector<double>* per_character) {
  if (detected.size() != expected.size()) throw std::invalid_argument("char_f1: sequence size mismatch");
  std::vector<int64_t> tp(static_cast<size_t>(n_characters), 0), fp(static_cast<size_t>(n_characters), 0),
      fn(static_cast<size_t>(n_characters), 0);
  for (size_t i = 0; i < detected.size(); ++i) {
    std::vector<uint8_t> got(static_cast<size_t>(n_characters), 0), want(static_cast<size_t>(n_characters), 0);
    for (int c : detected[i].characters)
      if (c >= 0 && c < n_characters) got[static_cast<size_t>(c)] = 1;
    for (int c : expected[i].characters)
      if (c >= 0 && c < n_characters) want[static_cast<size_t>(c)] = 1;
    for (int c = 0; c < n_characters; ++c) {
      if (got[static_cast<size_t>(c)] && want[static_cast<size_t>(c)]) ++tp[static_cast<size_t>(c)];
      if (got[static_cast<size_t>(c)] && !want[static_cast<size_t>(c)]) ++fp[static_cast<size_t>(c)];
      if (!got[static_cast<size_t>(c)] && want[static_cast<size_t>(c)]) ++fn[static_cast<size_t>(c)];
    }
  }
  if (per_character) {
    per_character->assign(static_cast<size_t>(n_characters), 0.0);
    for (int c = 0; c < n_characters; ++c) {
      const double denom = 2.0 * tp[static_cast<size_t>(c)] + fp[static_cast<size_t>(c)] + fn[static_cast<size_t>(c)];
      (*per_character)[static_cast<size_t>(c)] = denom > 0 ? 2.0 * tp[static_cast<size_t>(c)] / denom : 0.0;
    }
  }
  int64_t TP = 0, FP = 0, FN = 0;
  for (int c = 0; c < n_characters; ++c) {
    TP += tp[static_cast<size_t>(c)];
    FP += fp[static_cast<size_t>(c)];
    FN += fn[static_cast<size_t>(c)];
  }
  const double denom = 2.0 * TP + FP + FN;
  return denom > 0 ? 2.0 * TP / denom : 0.0;
}

double frame_accuracy(const std::vector<world::SceneSpec>& detected,
                      const std::vector<world::SceneSpec>& expected) {
  if (detected.size() != expected.size()) throw std::invalid_argument("frame_accuracy: sequence size mismatch");
  if (detected.empty()) return 0.0;
  size_t ok = 0;
  for (size_t i = 0; i < detected.size(); ++i) {
    std::vector<int> a = detected[i].characters, b = expected[i].characters;
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a == b) ++ok;
  }
  return static_cast<double>(ok) / static_cast<double>(detected.size());
}

double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n,
            double eps) {
  if (candidates.empty()) throw std::invalid_argument("bleu: empty candidate set");
  if (candidates.size() != references.size()) throw std::invalid_argument("bleu: candidate/reference mismatch");
  if (n < 1) throw std::invalid_argument("bleu: order must be >= 1");

  std::vector<std::vector<std::string>> cand_tok, ref_tok;
  for (const auto& c : candidates) cand_tok.push_back(tok::Vocab::split_words(c));
  for (const auto& r : references) ref_tok.push_back(tok::Vocab::split_words(r));

  double log_sum = 0.0;
  for (int order = 1; order <= n; ++order) {
    int64_t matched = 0, total = 0;
    for (size_t s = 0; s < cand_tok.size(); ++s) {
      std::map<std::vector<std::string>, int> cg, rg;
      const auto& c = cand_tok[s];
      const auto& r = ref_tok[s];
      for (size_t i = 0; i + order <= c.size(); ++i)
        cg[std::vector<std::string>(c.begin() + i, c.begin() + i + order)]++;
      for (size_t i = 0; i + order <= r.size(); ++i)
        rg[std::vector<std::string>(r.begin() + i, r.begin() + i + order)]++;
      for (const auto& [g, cnt] : cg) {
        total += cnt;
        auto it = rg.find(g);
        if (it != rg.end()) matched += std::min(cnt, it->second);
      }
    }
    double p = total == 0 ? 0.0 : static_cast<double>(matched) / static_cast<double>(total);
    if (p <= 0.0) p = eps;
    log_sum += std::log(p) / n;
  }
  size_t c_len = 0, r_len = 0;
  for (const auto& c : cand_tok) c_len += c.size();
  for (const auto& r : ref_tok) r_len += r.size();
  if (c_len == 0) return 0.0;
  const double bp = c_len >= r_len ? 1.0 : std::exp(1.0 - static_cast<double>(r_len) / static_cast<double>(c_len));
  return bp * std::exp(log_sum);
}

// ---------------------------------------------------------------------------
// Frechet distance
// ---------------------------------------------------------------------------

void sym_eig(std::vector<double> a, int n, std::vector<double>& eigenvalues,
             std::vector<double>& eigenvectors) {
  eigenvectors.assign(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i) eigenvectors[static_cast<size_t>(i) * n + i] = 1.0;
  auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i) * n + j]; };
  auto V = [&](int i, int j) -> double& { return eigenvectors[static_cast<size_t>(i) * n + j]; };

  for (int sweep = 0; sweep < 64; ++sweep) {
    double off = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
    if (off < 1e-24 * n * n) break;
    for (int p = 0; p < n - 1; ++p) {
      for (int q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (int k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (int k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (int k = 0; k < n; ++k) {
          const double vkp = V(k, p), vkq = V(k, q);
          V(k, p) = c * vkp - s * vkq;
          V(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  eigenvalues.assign(static_cast<size_t>(n), 0.0);
  for (int i = 0; i < n; ++i) eigenvalues[static_cast<size_t>(i)] = A(i, i);
}

namespace {

// B = V f(L) V^T for a symmetric input decomposed as V L V^T.
std::vector<double> rebuild(const std::vector<double>& eigenvalues, const std::vector<double>& v, int n,
                            double (*f)(double)) {
  std::vector<double> out(static_cast<size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    const double fl = f(eigenvalues[static_cast<size_t>(k)]);
    if (fl == 0.0) continue;
    for (int i = 0; i < n; ++i) {
      const double vik = v[static_cast<size_t>(i) * n + k] * fl;
      if (vik == 0.0) continue;
      for (int j = 0; j < n; ++j) out[static_cast<size_t>(i) * n + j] += vik * v[static_cast<size_t>(j) * n + k];
    }
  }
  return out;
}

double sqrt_clamped(double x) { return x > 0.0 ? std::sqrt(x) : 0.0; }

void shrink_if_singular(std::vector<double>& cov, int n, const char* side) {
  std::vector<double> eigenvalues, v;
  sym_eig(cov, n, eigenvalues, v);
  double max_eig = 0.0, min_eig = 1e300;
  for (double e : eigenvalues) {
    max_eig = std::max(max_eig, e);
    min_eig = std::min(min_eig, e);
  }
  if (min_eig < 1e-10 * std::max(1.0, max_eig)) {
    for (int i = 0; i < n; ++i) cov[static_cast<size_t>(i) * n + i] += 1e-6;
    Diagnostics::covariance_shrinkage_events()++;
    warn(std::string("frechet: near-singular covariance (") + side + "), applying 1e-6 shrinkage");
  }
}

std::vector<double> matmul_sq(const std::vector<double>& a, const std::vector<double>& b, int n) {
  std::vector<double> c(static_cast<size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < n; ++k) {
      const double aik = a[static_cast<size_t>(i) * n + k];
      if (aik == 0.0) continue;
      for (int j = 0; j < n; ++j) c[static_cast<size_t>(i) * n + j] += aik * b[static_cast<size_t>(k) * n + j];
    }
  return c;
}

}  // namespace

double frechet_gaussian(const std::vector<double>& mu1, std::vector<double> cov1,
                        const std::vector<double>& mu2, std::vector<double> cov2) {
  const int n = static_cast<int>(mu1.size());
  if (mu2.size() != mu1.size() || cov1.size() != static_cast<size_t>(n) * n || cov2.size() != cov1.size())
    throw std::invalid_argument("frechet_gaussian: dimension mismatch");
  shrink_if_singular(cov1, n, "side 1");
  shrink_if_singular(cov2, n, "side 2");

  double mean_term = 0.0;
  for (int i = 0; i < n; ++i) {
    const double d = mu1[static_cast<size_t>(i)] - mu2[static_cast<size_t>(i)];
    mean_term += d * d;
  }
  std::vector<double> e1, v1;
  sym_eig(cov1, n, e1, v1);
  std::vector<double> s1 = rebuild(e1, v1, n, sqrt_clamped);
  std::vector<double> middle = matmul_sq(matmul_sq(s1, cov2, n), s1, n);
  // symmetrize against round-off before the second decomposition
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double m = 0.5 * (middle[static_cast<size_t>(i) * n + j] + middle[static_cast<size_t>(j) * n + i]);
      middle[static_cast<size_t>(i) * n + j] = m;
      middle[static_cast<size_t>(j) * n + i] = m;
    }
  std::vector<double> em, vm;
  sym_eig(middle, n, em, vm);
  double tr_sqrt = 0.0;
  for (double e : em) tr_sqrt += sqrt_clamped(e);
  double tr1 = 0.0, tr2 = 0.0;
  for (int i = 0; i < n; ++i) {
    tr1 += cov1[static_cast<size_t>(i) * n + i];
    tr2 += cov2[static_cast<size_t>(i) * n + i];
  }
  const double fd = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
  return fd > 0.0 ? fd : 0.0;  // clamp tiny negative round-off
}

std::vector<std::vector<double>> patch_features(const std::vector<img::ImageF64>& images, int patch) {
  std::vector<std::vector<double>> out;
  for (const auto& im : images) {
    if (im.width % patch != 0 || im.height % patch != 0)
      throw std::invalid_argument("patch_features: image not divisible by patch");
    for (int py = 0; py < im.height / patch; ++py)
      for (int px = 0; px < im.width / patch; ++px) {
        std::vector<double> f;
        f.reserve(static_cast<size_t>(patch) * patch * im.channels + 2);
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x)
            for (int c = 0; c < im.channels; ++c)
              f.push_back(im.at(py * patch + y, px * patch + x, c) / 255.0);
        double gx = 0.0, gy = 0.0;
        int nx = 0, ny = 0;
        for (int y = 0; y < patch; ++y)
          for (int x = 0; x < patch; ++x)
            for (int c = 0; c < im.channels; ++c) {
              if (x + 1 < patch) {
                gx += std::abs(im.at(py * patch + y, px * patch + x + 1, c) - im.at(py * patch + y, px * patch + x, c));
                ++nx;
              }
              if (y + 1 < patch) {
                gy += std::abs(im.at(py * patch + y + 1, px * patch + x, c) - im.at(py * patch + y, px * patch + x, c));
                ++ny;
              }
            }
        f.push_back(nx ? gx / nx / 255.0 : 0.0);
        f.push_back(ny ? gy / ny / 255.0 : 0.0);
        out.push_back(std::move(f));
      }
  }
  return out;
}

namespace {

void fit_gaussian(const std::vector<std::vector<double>>& xs, std::vector<double>& mu,
                  std::vector<double>& cov) {
  const int n = static_cast<int>(xs[0].size());
  const double m = static_cast<double>(xs.size());
  mu.assign(static_cast<size_t>(n), 0.0);
  for (const auto& x : xs)
    for (int i = 0; i < n; ++i) mu[static_cast<size_t>(i)] += x[static_cast<size_t>(i)] / m;
  cov.assign(static_cast<size_t>(n) * n, 0.0);
  for (const auto& x : xs) {
    for (int i = 0; i < n; ++i) {
      const double di = x[static_cast<size_t>(i)] - mu[static_cast<size_t>(i)];
      if (di == 0.0) continue;
      for (int j = 0; j < n; ++j)
        cov[static_cast<size_t>(i) * n + j] += di * (x[static_cast<size_t>(j)] - mu[static_cast<size_t>(j)]) / m;
    }
  }
}

}  // namespace

double patch_frechet_distance(const std::vector<img::ImageF64>& real_images,
                              const std::vector<img::ImageF64>& generated_images, int patch) {
  if (real_images.size() < 2 || generated_images.size() < 2)
    throw std::invalid_argument("patch_frechet_distance: need at least 2 images per side");
  auto fa = patch_features(real_images, patch);
  auto fb = patch_features(generated_images, patch);
  std::vector<double> mu1, cov1, mu2, cov2;
  fit_gaussian(fa, mu1, cov1);
  fit_gaussian(fb, mu2, cov2);
  return frechet_gaussian(mu1, std::move(cov1), mu2, std::move(cov2));
}

double bg_consistency(const std::vector<std::vector<world::SceneSpec>>& detected,
                      const std::vector<world::StorySample>& ground_truth) {
  if (detected.size() != ground_truth.size()) throw std::invalid_argument("bg_consistency: size mismatch");
  const auto& bgs = world::background_names();
  auto mentions_bg = [&](const std::string& sentence) {
    for (const auto& w : tok::Vocab::split_words(sentence))
      for (const auto& b : bgs)
        if (w == b) return true;
    return false;
  };
  int64_t hits = 0, total = 0;
  for (size_t s = 0; s < ground_truth.size(); ++s) {
    const auto& gt = ground_truth[s];
    bool memory_demanding = true;
    for (size_t t = 1; t < gt.frames.size(); ++t)
      if (mentions_bg(gt.frames[t].sentence)) memory_demanding = false;
    if (!memory_demanding) continue;
    for (size_t t = 1; t < gt.frames.size() && t < detected[s].size(); ++t) {
      ++total;
      if (detected[s][t].background == gt.background) ++hits;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(hits) / static_cast<double>(total);
}

MetricReport evaluate_stories(const std::vector<world::StorySample>& ground_truth,
                              const std::vector<std::vector<img::ImageF64>>& generated_images,
                              const std::vector<std::vector<std::string>>& captions,
                              const world::WorldConfig& wcfg) {
  if (generated_images.size() != ground_truth.size())
    throw std::invalid_argument("evaluate_stories: story count mismatch");
  world::SceneDetector detector(wcfg);
  MetricReport rep;
  rep.n_samples = static_cast<int>(ground_truth.size());

  std::vector<world::SceneSpec> det_flat, gt_flat;
  std::vector<std::vector<world::SceneSpec>> det_stories;
  std::vector<img::ImageF64> real_flat, gen_flat;
  std::vector<std::string> cap_flat, ref_flat;
  for (size_t s = 0; s < ground_truth.size(); ++s) {
    std::vector<world::SceneSpec> det_story;
    for (size_t t = 0; t < ground_truth[s].frames.size(); ++t) {
      const auto& frame = ground_truth[s].frames[t];
      gt_flat.push_back(frame.spec);
      real_flat.push_back(img::ImageF64::from_u8(frame.image));
      const auto& gen = generated_images[s][t];
      gen_flat.push_back(gen);
      det_story.push_back(detector.detect(gen));
      det_flat.push_back(det_story.back());
      if (!captions.empty()) {
        cap_flat.push_back(captions[s][t]);
        ref_flat.push_back(tok::Vocab::normalize(frame.sentence));
      }
    }
    det_stories.push_back(std::move(det_story));
  }
  rep.char_f1 = char_f1(det_flat, gt_flat, wcfg.n_characters, &rep.per_character_f1);
  rep.frame_acc = frame_accuracy(det_flat, gt_flat);
  if (!cap_flat.empty()) {
    rep.bleu2 = bleu(cap_flat, ref_flat, 2);
    rep.bleu3 = bleu(cap_flat, ref_flat, 3);
  }
  rep.patch_fd = patch_frechet_distance(real_flat, gen_flat, 8);
  rep.bg_consistency = bg_consistency(det_stories, ground_truth);
  return rep;
}

std::string report_to_json(const MetricReport& r) {
  std::ostringstream os;
  os.precision(12);
  os << "{\"char_f1\":" << r.char_f1 << ",\"frame_acc\":" << r.frame_acc << ",\"bleu2\":" << r.bleu2
     << ",\"bleu3\":" << r.bleu3 << ",\"patch_fd\":" << r.patch_fd << ",\"bg_consistency\":" << r.bg_consistency
     << ",\"n_samples\":" << r.n_samples << ",\"config_hash\":\"" << r.config_hash << "\",\"per_character_f1\":[";
  for (size_t i = 0; i < r.per_character_f1.size(); ++i) os << (i ? "," : "") << r.per_character_f1[i];
  os << "]}";
  return os.str();
}

}  // namespace cmota::metrics
