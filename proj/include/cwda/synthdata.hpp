#pragma once

// Two-domain synthetic shape dataset. Source images are clean renders of a
// single square, circle or triangle; target images are the same kind of
// render pushed through an atmospheric-scattering haze, noise and a
// brightness shift.

#include <array>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "cwda/alignment.hpp"
#include "cwda/model.hpp"
#include "cwda/tensor.hpp"

namespace cwda {

inline constexpr std::size_t kImageSize = 32;
inline constexpr std::size_t kImageChannels = 3;
inline constexpr std::size_t kImagePixels = kImageChannels * kImageSize * kImageSize;

enum class ShapeClass { Square = 0, Circle = 1, Triangle = 2 };

struct DomainShift {
  double alpha_min = 0.5;
  double alpha_max = 0.8;
  double haze_color = 0.8;
  double noise_sigma = 0.02;
  double brightness_delta = 0.1;  // shift drawn from [-delta, delta]

  static DomainShift fog() { return {}; }
  static DomainShift strong_fog() { return {0.3, 0.5, 0.8, 0.03, 0.1}; }
  static DomainShift none() { return {1.0, 1.0, 0.8, 0.0, 0.0}; }
  /// "fog", "strong-fog" or "none"; throws ConfigError otherwise.
  static DomainShift preset(const std::string& name);
  bool is_identity() const { return alpha_min == 1.0 && alpha_max == 1.0 && noise_sigma == 0.0 && brightness_delta == 0.0; }
};

/// Geometry and colours of one rendered object.
struct ShapeSpec {
  ShapeClass shape = ShapeClass::Square;
  int x0 = 0, y0 = 0, size = 6;  // bounding square in pixels
  std::array<double, 3> color{};
  std::array<double, 3> background{};

  static ShapeSpec random(std::mt19937_64& rng);
};

/// Pixels in [0, 1], channel-major (3, 32, 32), plus the object mask.
struct Render {
  std::vector<double> pixels;
  std::vector<std::uint8_t> mask;  // (32, 32)
};

Render render_shape(const ShapeSpec& spec);
/// Tight box of a mask, normalized (cx, cy, w, h).
std::array<double, 4> box_from_mask(const std::vector<std::uint8_t>& mask);
/// x' = clamp(alpha*x + (1 - alpha)*haze + noise + brightness, 0, 1).
std::vector<double> apply_shift(const std::vector<double>& pixels, const DomainShift& shift, std::mt19937_64& rng);

class Sample {
 public:
  Sample(std::vector<std::uint8_t> pixels, ObjectLabel truth, DomainLabel domain, bool label_visible);

  /// (3, 32, 32) tensor with values pixel / 255.
  Tensor image() const;
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }
  DomainLabel domain() const { return domain_; }
  bool label_visible() const { return label_visible_; }
  /// Ground truth for labelled samples; throws ContractError when hidden.
  const ObjectLabel& label() const;

  friend ObjectLabel oracle_label(const Sample& sample);

 private:
  std::vector<std::uint8_t> pixels_;
  ObjectLabel truth_;
  DomainLabel domain_;
  bool label_visible_;
};

/// Ground truth regardless of visibility. Evaluation and the oracle baseline
/// only; the adaptation trainer must go through Sample::label().
ObjectLabel oracle_label(const Sample& sample);
std::vector<ObjectLabel> oracle_labels(const std::vector<Sample>& samples);

enum class Split { Train = 0, Val = 1, Test = 2 };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SplitRatios {
  double train = 0.6;
  double val = 0.15;
  double test = 0.25;

  void validate() const;
  /// Sample counts per split for n items; every split gets at least one.
  std::array<std::size_t, 3> counts(std::size_t n) const;
};

struct GenerateOptions {
  std::uint64_t seed = 7;
  std::size_t n_source = 2000;
  std::size_t n_target = 2000;
  SplitRatios ratios;
  DomainShift shift;
  std::string shift_name = "fog";
};

struct Dataset {
  GenerateOptions options;
  std::array<std::vector<Sample>, 3> source;
  std::array<std::vector<Sample>, 3> target;

  const std::vector<Sample>& split(DomainLabel domain, Split split) const;
  /// FNV-1a 64 over the serialized split files, as 16 hex digits.
  std::string hash() const;
};

/// Deterministic in options. Per-sample random streams are derived from
/// (seed, domain, index), so any sample can be regenerated in isolation.
Dataset generate(const GenerateOptions& options);

/// Directory layout: meta.txt plus {source,target}_{train,val,test}.bin.
void save_dataset(const Dataset& dataset, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Serialized bytes of one split file.
std::vector<std::uint8_t> encode_split(const std::vector<Sample>& samples);
std::vector<Sample> decode_split(const std::vector<std::uint8_t>& bytes);

}  // namespace cwda
