#pragma once

#include "asyncdiff/diffusion.hpp"
#include "asyncdiff/mixture.hpp"

#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace asyncdiff {

// (producer stage, consumer stage) -> feature vector
using SkipMap = std::map<std::pair<int, int>, Vec>;

// Learned projection of a fixed sinusoidal timestep code.
struct TimeEmbedding {
    int dim = 0;  // even
    Mat proj;     // dim x dim

    static Vec sinusoid(int t, int dim);
    Vec embed(int t) const { return proj * sinusoid(t, dim); }
};

// One block: two dense layers with a leaky-relu in between and an additive
// projection of the time embedding into the pre-activation.
struct Stage {
    int index = 0;  // 1-based
    Mat w1;         // hidden x in
    Vec b1;         // hidden
    Mat time_in;    // hidden x embed_dim
    Mat w2;         // out x hidden
    Vec b2;         // out
    long long cost_macs = 0;

    int in_width() const { return static_cast<int>(w1.cols()); }
    int hidden_width() const { return static_cast<int>(w1.rows()); }
    int out_width() const { return static_cast<int>(w2.rows()); }
};

enum class SkipSpec { None, UnetMirror };

SkipSpec skip_spec_from_string(const std::string& s);
std::string to_string(SkipSpec s);

// Stage-list noise predictor. Stage 1 consumes concat(x, time embedding);
// skip consumers concatenate the producer stage's output onto their input.
struct LayeredDenoiser {
    std::vector<Stage> stages;                   // length L
    std::vector<std::pair<int, int>> skip_links; // producer < consumer, sorted
    TimeEmbedding time_embed;
    std::vector<int> widths;                     // length L+1; widths[0] = data dim

    int num_stages() const { return static_cast<int>(stages.size()); }
    int data_dim() const { return widths.front(); }
    long long total_macs() const;

    // skip links with the given consumer, ascending producer order
    std::vector<std::pair<int, int>> links_into(int consumer) const;
    std::vector<std::pair<int, int>> links_out_of(int producer) const;
};

LayeredDenoiser build_toy_denoiser(int L, const std::vector<int>& widths,
                                   SkipSpec skip_spec, uint64_t seed,
                                   int time_embed_dim = 8);

// zero-initialized model with an explicit skip topology (checkpoint loading)
LayeredDenoiser make_denoiser_shell(int L, const std::vector<int>& widths,
                                    std::vector<std::pair<int, int>> skip_links,
                                    int time_embed_dim);

// Full cascading evaluation; reference semantics for any segment chaining.
Vec eval_full(const LayeredDenoiser& m, const Latent& x, int t_embed);

// Boundary activation plus the crossing skip features of one segment; the
// unit of inter-device broadcast.
struct HiddenBundle {
    Vec boundary;
    SkipMap skips;       // exactly the links crossing out of the producing segment
    int produced_by = 0; // segment index, 1-based
    int produced_at = 0; // embedding timestep
};

// Final segment yields the eps vector, every other segment a HiddenBundle.
using SegmentOutput = std::variant<HiddenBundle, Vec>;

struct Partition;  // partition.hpp

SegmentOutput eval_segment(const LayeredDenoiser& m, const Partition& p, int seg,
                           const Latent& x, const SkipMap& skips_in, int t_embed);
SegmentOutput eval_segment(const LayeredDenoiser& m, const Partition& p, int seg,
                           const HiddenBundle& input, const SkipMap& skips_in,
                           int t_embed);

struct TrainResult {
    LayeredDenoiser model;
    std::vector<double> losses;  // one entry per optimization step
};

// Noise-prediction objective: E ||eps_hat(x_t, t) - eps||^2 over x0 ~ gm,
// t ~ U{1..T}, eps ~ N(0, I). Adam, deterministic given seed.
TrainResult train_toy(const LayeredDenoiser& m, const GaussianMixture& gm,
                      const NoiseSchedule& schedule, int steps, int batch,
                      double lr, uint64_t seed);

}  // namespace asyncdiff
