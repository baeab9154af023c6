#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "scvm/tensor.hpp"

// Synthetic visual question answering over small colored glyphs.
//
// Images are square RGB grids split into 4x4 cells; each glyph is a 3x3
// pattern placed inside one cell at offset 0 or 1 on each axis, over
// uniform background noise in [0, noise). Four question families:
//
//   color_all       "what color glyphs ?"  every glyph shares one color
//   shape_all       "what shape glyphs ?"  every glyph shares one shape
//   count_shape     "how many <shape> ?"   number of glyphs of a shape, 0..3
//   color_of_shape  "what color <shape> ?" color of the unique glyph of a shape
//
// The family is drawn with probabilities 1/6, 1/3, 1/3, 1/6 and the answer
// uniformly within the family, so each of the 12 answers has frequency 1/12.
namespace scvm {

enum class Color : std::uint8_t { kRed, kGreen, kBlue, kYellow };
enum class GlyphShape : std::uint8_t { kSquare, kCircle, kTriangle, kCross };
enum class Family : std::uint8_t { kColorAll, kShapeAll, kCountShape, kColorOfShape };

inline constexpr std::size_t kNumColors = 4;
inline constexpr std::size_t kNumShapes = 4;
inline constexpr std::size_t kNumFamilies = 4;
inline constexpr std::size_t kQuestionVocab = 16;  // V_q
inline constexpr std::size_t kAnswerVocab = 12;    // V_a
inline constexpr std::size_t kQuestionLength = 4;  // T_q

std::string_view family_name(Family f);
std::string_view answer_name(std::uint32_t answer_id);

/// Answer ids: 0-3 colors, 4-7 shapes, 8-11 counts 0..3.
std::uint32_t color_answer(Color c);
std::uint32_t shape_answer(GlyphShape s);
std::uint32_t count_answer(std::uint32_t count);

struct TaskSpec {
  std::size_t image_size = 16;
  double noise = 0.05;
  std::uint64_t language_seed = 1234;
  std::size_t answer_tokens = 1;  // T_a

  void validate() const;
};

struct Glyph {
  GlyphShape shape;
  Color color;
  std::uint32_t row;  // top-left pixel
  std::uint32_t col;
};

struct Sample {
  std::uint64_t seed = 0;
  std::uint32_t image_size = 0;
  std::vector<float> image;  // [H x W x 3], row-major
  std::uint32_t question_id = 0;
  Family family = Family::kColorAll;
  std::vector<std::uint32_t> question_tokens;
  std::uint32_t answer_id = 0;
  std::vector<Glyph> glyphs;

  template <typename T>
  Tensor<T> image_tensor() const {
    return Tensor<T>::from({image_size, image_size, 3}, std::vector<T>(image.begin(), image.end()));
  }
};

/// Fully determined by `seed`.
Sample generate_sample(std::uint64_t seed, const TaskSpec& spec);
/// Sample `index` of the dataset named by `dataset_seed`.
Sample dataset_sample(std::uint64_t dataset_seed, std::uint64_t index, const TaskSpec& spec);

/// 3x3 occupancy mask of a glyph shape, row-major.
const std::array<bool, 9>& glyph_mask(GlyphShape s);

/// Frozen proxy embedding tables standing in for language-model hidden
/// states (questions) and input embeddings (answers). Rows are unit norm.
class ProxyLanguageSpace {
 public:
  ProxyLanguageSpace(std::size_t llm_dim, std::uint64_t seed);

  std::size_t llm_dim() const { return llm_dim_; }
  const std::vector<double>& question_table() const { return question_; }
  const std::vector<double>& answer_table() const { return answer_; }

  /// [T_q x D_llm] row lookup.
  template <typename T>
  Tensor<T> embed_question(const std::vector<std::uint32_t>& tokens) const;
  /// Mean of the answer-token rows, [D_llm].
  template <typename T>
  Tensor<T> embed_answer(const std::vector<std::uint32_t>& answer_tokens) const;

 private:
  std::size_t llm_dim_;
  std::vector<double> question_;  // [V_q x D_llm]
  std::vector<double> answer_;    // [V_a x D_llm]
};

/// Answer token ids for an answer (T_a copies of the answer id by default).
std::vector<std::uint32_t> answer_tokens(std::uint32_t answer_id, const TaskSpec& spec);

/// Record-framed little-endian dump: per record a u32 byte length followed
/// by the serialized sample.
void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

}  // namespace scvm
