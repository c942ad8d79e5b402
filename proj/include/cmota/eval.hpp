#pragma once

#include <string>
#include <vector>

#include "cmota/image.hpp"
#include "cmota/storyworld.hpp"

namespace cmota::metrics {

struct MetricReport {
  double char_f1 = 0.0;
  double frame_acc = 0.0;
  double bleu2 = 0.0;
  double bleu3 = 0.0;
  double patch_fd = 0.0;
  double bg_consistency = 0.0;
  int n_samples = 0;
  std::string config_hash;
  std::vector<double> per_character_f1;
};

// Micro-averaged multi-label F1 over character presence; optionally fills a
// per-character F1 table.
double char_f1(const std::vector<world::SceneSpec>& detected, const std::vector<world::SceneSpec>& expected,
               int n_characters, std::vector<double>* per_character = nullptr);

// Fraction of frames whose predicted character set matches exactly.
double frame_accuracy(const std::vector<world::SceneSpec>& detected,
                      const std::vector<world::SceneSpec>& expected);

// Corpus BLEU-n (n in {2,3}): geometric mean of modified 1..n-gram precisions
// with brevity penalty; zero precisions are floored at eps = 1e-9.
double bleu(const std::vector<std::string>& candidates, const std::vector<std::string>& references, int n,
            double eps = 1e-9);

// Symmetric eigendecomposition (cyclic Jacobi). Exposed for tests.
void sym_eig(std::vector<double> a, int n, std::vector<double>& eigenvalues,
             std::vector<double>& eigenvectors);

// Frechet distance between Gaussians: |mu1-mu2|^2 + Tr(S1 + S2 - 2(S1 S2)^(1/2)),
// computed via the symmetric square root with eigenvalue clamping at zero.
// Near-singular covariances receive a 1e-6 I shrinkage (counted and logged).
double frechet_gaussian(const std::vector<double>& mu1, std::vector<double> cov1,
                        const std::vector<double>& mu2, std::vector<double> cov2);

// Per-patch feature vectors: raw pixels scaled to [0,1] plus mean |dx|, |dy|.
std::vector<std::vector<double>> patch_features(const std::vector<img::ImageF64>& images, int patch);

double patch_frechet_distance(const std::vector<img::ImageF64>& real_images,
                              const std::vector<img::ImageF64>& generated_images, int patch = 8);

// Fraction of frames t >= 2 whose detected background equals the story's
// ground-truth background, over stories whose sentences after the first omit
// the background word.
double bg_consistency(const std::vector<std::vector<world::SceneSpec>>& detected,
                      const std::vector<world::StorySample>& ground_truth);

// Full evaluation of generated stories against their ground truth.
MetricReport evaluate_stories(const std::vector<world::StorySample>& ground_truth,
                              const std::vector<std::vector<img::ImageF64>>& generated_images,
                              const std::vector<std::vector<std::string>>& captions,
                              const world::WorldConfig& wcfg);

std::string report_to_json(const MetricReport& r);

}  // namespace cmota::metrics
