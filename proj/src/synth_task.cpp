#include "scvm/synth_task.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "scvm/bytes.hpp"
#include "scvm/rng.hpp"

namespace scvm {

namespace {

constexpr std::size_t kCell = 4;
constexpr std::uint32_t kMaxGlyphs = 3;

// Question token ids.
enum Token : std::uint32_t {
  kWhat = 0, kColorTok = 1, kShapeTok = 2, kHow = 3, kMany = 4, kGlyphs = 5,
  kSquareTok = 6, kCircleTok = 7, kTriangleTok = 8, kCrossTok = 9, kQuestionMark = 10,
};

constexpr std::array<std::array<float, 3>, kNumColors> kRgb{{
    {1.0f, 0.0f, 0.0f},
    {0.0f, 1.0f, 0.0f},
    {0.0f, 0.0f, 1.0f},
    {1.0f, 1.0f, 0.0f},
}};

std::uint32_t shape_token(GlyphShape s) { return kSquareTok + static_cast<std::uint32_t>(s); }

}  // namespace

std::string_view family_name(Family f) {
  switch (f) {
    case Family::kColorAll: return "color_all";
    case Family::kShapeAll: return "shape_all";
    case Family::kCountShape: return "count_shape";
    case Family::kColorOfShape: return "color_of_shape";
  }
  return "?";
}

std::string_view answer_name(std::uint32_t answer_id) {
  static constexpr std::array<std::string_view, kAnswerVocab> names{
      "red", "green", "blue", "yellow", "square", "circle", "triangle", "cross", "0", "1", "2", "3"};
  return answer_id < names.size() ? names[answer_id] : "?";
}

std::uint32_t color_answer(Color c) { return static_cast<std::uint32_t>(c); }
std::uint32_t shape_answer(GlyphShape s) { return 4 + static_cast<std::uint32_t>(s); }
std::uint32_t count_answer(std::uint32_t count) { return 8 + count; }

void TaskSpec::validate() const {
  if (image_size % kCell != 0 || (image_size / kCell) * (image_size / kCell) < kMaxGlyphs) {
    throw std::invalid_argument("task: image_size must be a multiple of 4 with room for 3 glyphs");
  }
  if (!(noise >= 0.0 && noise < 1.0)) throw std::invalid_argument("task: noise must lie in [0, 1)");
  if (answer_tokens == 0) throw std::invalid_argument("task: answer_tokens must be positive");
}

const std::array<bool, 9>& glyph_mask(GlyphShape s) {
  static constexpr std::array<std::array<bool, 9>, kNumShapes> masks{{
      {1, 1, 1, 1, 1, 1, 1, 1, 1},  // square
      {1, 1, 1, 1, 0, 1, 1, 1, 1},  // circle (ring)
      {0, 1, 0, 1, 1, 1, 1, 1, 1},  // triangle
      {0, 1, 0, 1, 1, 1, 0, 1, 0},  // cross
  }};
  return masks[static_cast<std::size_t>(s)];
}

Sample generate_sample(std::uint64_t seed, const TaskSpec& spec) {
  spec.validate();
  Rng rng(seed);
  Sample s;
  s.seed = seed;
  s.image_size = static_cast<std::uint32_t>(spec.image_size);

  auto any_shape = [&] { return static_cast<GlyphShape>(rng.below(kNumShapes)); };
  auto any_color = [&] { return static_cast<Color>(rng.below(kNumColors)); };
  // Draws `count` distinct values from [0, 4) excluding `excluded`.
  auto distinct_excluding = [&](std::uint32_t excluded, std::uint32_t count) {
    std::vector<std::uint32_t> pool;
    for (std::uint32_t v = 0; v < 4; ++v)
      if (v != excluded) pool.push_back(v);
    for (std::uint32_t i = 0; i < count; ++i) {
      std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
    }
    pool.resize(count);
    return pool;
  };

  std::vector<std::pair<GlyphShape, Color>> glyphs;
  const std::uint64_t draw = rng.below(6);
  if (draw == 0) {
    s.family = Family::kColorAll;
    const Color c = any_color();
    const auto n = 1 + rng.below(kMaxGlyphs);
    for (std::uint64_t i = 0; i < n; ++i) glyphs.emplace_back(any_shape(), c);
    s.question_id = 0;
    s.question_tokens = {kWhat, kColorTok, kGlyphs, kQuestionMark};
    s.answer_id = color_answer(c);
  } else if (draw <= 2) {
    s.family = Family::kShapeAll;
    const GlyphShape shape = any_shape();
    const auto n = 1 + rng.below(kMaxGlyphs);
    for (std::uint64_t i = 0; i < n; ++i) glyphs.emplace_back(shape, any_color());
    s.question_id = 1;
    s.question_tokens = {kWhat, kShapeTok, kGlyphs, kQuestionMark};
    s.answer_id = shape_answer(shape);
  } else if (draw <= 4) {
    s.family = Family::kCountShape;
    const GlyphShape query = any_shape();
    const auto k = static_cast<std::uint32_t>(rng.below(kMaxGlyphs + 1));
    const auto n = k == 0 ? 1 + rng.below(kMaxGlyphs) : k + rng.below(kMaxGlyphs - k + 1);
    for (std::uint32_t i = 0; i < k; ++i) glyphs.emplace_back(query, any_color());
    for (std::uint64_t i = k; i < n; ++i) {
      const auto other = distinct_excluding(static_cast<std::uint32_t>(query), 1)[0];
      glyphs.emplace_back(static_cast<GlyphShape>(other), any_color());
    }
    s.question_id = 2 + static_cast<std::uint32_t>(query);
    s.question_tokens = {kHow, kMany, shape_token(query), kQuestionMark};
    s.answer_id = count_answer(k);
  } else {
    s.family = Family::kColorOfShape;
    const GlyphShape query = any_shape();
    const Color color = any_color();
    const auto n = static_cast<std::uint32_t>(2 + rng.below(kMaxGlyphs - 1));
    const auto shapes = distinct_excluding(static_cast<std::uint32_t>(query), n - 1);
    const auto colors = distinct_excluding(static_cast<std::uint32_t>(color), n - 1);
    glyphs.emplace_back(query, color);
    for (std::uint32_t i = 0; i + 1 < n; ++i) {
      glyphs.emplace_back(static_cast<GlyphShape>(shapes[i]), static_cast<Color>(colors[i]));
    }
    s.question_id = 6 + static_cast<std::uint32_t>(query);
    s.question_tokens = {kWhat, kColorTok, shape_token(query), kQuestionMark};
    s.answer_id = color_answer(color);
  }

  // Distinct cells via a partial Fisher-Yates shuffle.
  const std::size_t grid = spec.image_size / kCell;
  std::vector<std::uint32_t> cells(grid * grid);
  for (std::uint32_t i = 0; i < cells.size(); ++i) cells[i] = i;
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    std::swap(cells[i], cells[i + rng.below(cells.size() - i)]);
  }
  for (std::size_t i = 0; i < glyphs.size(); ++i) {
    const auto cell = cells[i];
    const auto row = static_cast<std::uint32_t>((cell / grid) * kCell + rng.below(2));
    const auto col = static_cast<std::uint32_t>((cell % grid) * kCell + rng.below(2));
    s.glyphs.push_back({glyphs[i].first, glyphs[i].second, row, col});
  }

  const std::size_t w = spec.image_size;
  s.image.resize(w * w * 3);
  for (auto& v : s.image) v = static_cast<float>(spec.noise * rng.uniform());
  for (const auto& g : s.glyphs) {
    const auto& mask = glyph_mask(g.shape);
    const auto& rgb = kRgb[static_cast<std::size_t>(g.color)];
    for (std::size_t dy = 0; dy < 3; ++dy)
      for (std::size_t dx = 0; dx < 3; ++dx) {
        if (!mask[dy * 3 + dx]) continue;
        float* px = &s.image[((g.row + dy) * w + (g.col + dx)) * 3];
        std::copy(rgb.begin(), rgb.end(), px);
      }
  }
  return s;
}

Sample dataset_sample(std::uint64_t dataset_seed, std::uint64_t index, const TaskSpec& spec) {
  return generate_sample(derive_seed(dataset_seed, index), spec);
}

ProxyLanguageSpace::ProxyLanguageSpace(std::size_t llm_dim, std::uint64_t seed) : llm_dim_(llm_dim) {
  if (llm_dim == 0) throw std::invalid_argument("language space: llm_dim must be positive");
  Rng rng(seed);
  auto fill = [&](std::vector<double>& table, std::size_t rows) {
    table.resize(rows * llm_dim);
    for (std::size_t r = 0; r < rows; ++r) {
      double norm2 = 0.0;
      for (std::size_t c = 0; c < llm_dim; ++c) {
        const double v = rng.uniform(-1.0, 1.0);
        table[r * llm_dim + c] = v;
        norm2 += v * v;
      }
      const double inv = 1.0 / std::sqrt(norm2);
      for (std::size_t c = 0; c < llm_dim; ++c) table[r * llm_dim + c] *= inv;
    }
  };
  fill(question_, kQuestionVocab);
  fill(answer_, kAnswerVocab);
}

template <typename T>
Tensor<T> ProxyLanguageSpace::embed_question(const std::vector<std::uint32_t>& tokens) const {
  if (tokens.empty()) throw std::invalid_argument("embed_question: empty question");
  std::vector<T> out;
  out.reserve(tokens.size() * llm_dim_);
  for (auto id : tokens) {
    if (id >= kQuestionVocab) {
      throw std::out_of_range("embed_question: token id " + std::to_string(id) + " >= " +
                              std::to_string(kQuestionVocab));
    }
    for (std::size_t c = 0; c < llm_dim_; ++c) out.push_back(static_cast<T>(question_[id * llm_dim_ + c]));
  }
  return Tensor<T>::from({tokens.size(), llm_dim_}, std::move(out));
}

template <typename T>
Tensor<T> ProxyLanguageSpace::embed_answer(const std::vector<std::uint32_t>& ids) const {
  if (ids.empty()) throw std::invalid_argument("embed_answer: no answer tokens");
  std::vector<double> acc(llm_dim_, 0.0);
  for (auto id : ids) {
    if (id >= kAnswerVocab) {
      throw std::out_of_range("embed_answer: answer id " + std::to_string(id) + " >= " +
                              std::to_string(kAnswerVocab));
    }
    for (std::size_t c = 0; c < llm_dim_; ++c) acc[c] += answer_[id * llm_dim_ + c];
  }
  std::vector<T> out(llm_dim_);
  for (std::size_t c = 0; c < llm_dim_; ++c) out[c] = static_cast<T>(acc[c] / static_cast<double>(ids.size()));
  return Tensor<T>::from({llm_dim_}, std::move(out));
}

template Tensor<float> ProxyLanguageSpace::embed_question(const std::vector<std::uint32_t>&) const;
template Tensor<double> ProxyLanguageSpace::embed_question(const std::vector<std::uint32_t>&) const;
template Tensor<float> ProxyLanguageSpace::embed_answer(const std::vector<std::uint32_t>&) const;
template Tensor<double> ProxyLanguageSpace::embed_answer(const std::vector<std::uint32_t>&) const;

std::vector<std::uint32_t> answer_tokens(std::uint32_t answer_id, const TaskSpec& spec) {
  return std::vector<std::uint32_t>(spec.answer_tokens, answer_id);
}

// ---- dataset dump ----------------------------------------------------------

namespace {

std::string serialize(const Sample& s) {
  ByteWriter w;
  w.u64(s.seed);
  w.u32(s.image_size);
  w.u32(static_cast<std::uint32_t>(s.family));
  w.u32(s.question_id);
  w.u32(s.answer_id);
  w.u32(static_cast<std::uint32_t>(s.question_tokens.size()));
  for (auto t : s.question_tokens) w.u32(t);
  w.u32(static_cast<std::uint32_t>(s.glyphs.size()));
  for (const auto& g : s.glyphs) {
    w.u32(static_cast<std::uint32_t>(g.shape));
    w.u32(static_cast<std::uint32_t>(g.color));
    w.u32(g.row);
    w.u32(g.col);
  }
  for (float v : s.image) w.f32(v);
  return w.bytes();
}

Sample deserialize(std::string_view bytes) {
  ByteReader r(bytes, "dataset record");
  Sample s;
  s.seed = r.u64();
  s.image_size = r.u32();
  s.family = static_cast<Family>(r.u32());
  s.question_id = r.u32();
  s.answer_id = r.u32();
  s.question_tokens.resize(r.u32());
  for (auto& t : s.question_tokens) t = r.u32();
  s.glyphs.resize(r.u32());
  for (auto& g : s.glyphs) {
    g.shape = static_cast<GlyphShape>(r.u32());
    g.color = static_cast<Color>(r.u32());
    g.row = r.u32();
    g.col = r.u32();
  }
  s.image.resize(static_cast<std::size_t>(s.image_size) * s.image_size * 3);
  for (auto& v : s.image) v = r.f32();
  if (!r.done()) throw IoError("dataset: trailing bytes in record");
  return s;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const std::vector<Sample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : samples) {
    const std::string rec = serialize(s);
    ByteWriter len;
    len.u32(static_cast<std::uint32_t>(rec.size()));
    out.write(len.bytes().data(), 4);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::vector<Sample> samples;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    if (pos + 4 > bytes.size()) throw IoError("dataset: truncated length prefix in " + path.string());
    ByteReader len(std::string_view(bytes).substr(pos, 4), "dataset length prefix");
    const std::uint32_t n = len.u32();
    pos += 4;
    if (pos + n > bytes.size()) throw IoError("dataset: truncated record in " + path.string());
    samples.push_back(deserialize(std::string_view(bytes).substr(pos, n)));
    pos += n;
  }
  return samples;
}

}  // namespace scvm
