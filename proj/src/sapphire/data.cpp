#include "sapphire/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <limits>
#include <memory>
#include <ostream>
#include <set>

#include "sapphire/errors.hpp"
#include "sapphire/rng.hpp"

namespace sapphire {

void Dataset::validate() const {
  if (labels.size() != features.rows())
    throw DimensionMismatch("Dataset labels", features.rows(), labels.size());
  if (!all_finite(features.values()))
    throw InvalidArgument("Dataset: non-finite feature value");
  for (double y : labels) {
    if (!std::isfinite(y)) throw InvalidArgument("Dataset: non-finite label");
    if (kind == LabelKind::binary && y != 1.0 && y != -1.0)
      throw InvalidArgument("Dataset: binary labels must be -1 or +1");
  }
}

namespace {

class MemorySource final : public ByteSource {
 public:
  explicit MemorySource(std::string_view text) : text_(text) {}
  std::size_t read(char* buffer, std::size_t capacity) override {
    const std::size_t k = std::min(capacity, text_.size() - pos_);
    std::memcpy(buffer, text_.data() + pos_, k);
    pos_ += k;
    return k;
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

class FileSource final : public ByteSource {
 public:
  explicit FileSource(const std::filesystem::path& path)
      : file_(std::fopen(path.c_str(), "rb")) {
    if (!file_) throw IoError("cannot open " + path.string());
  }
  ~FileSource() override { std::fclose(file_); }
  FileSource(const FileSource&) = delete;
  FileSource& operator=(const FileSource&) = delete;
  std::size_t read(char* buffer, std::size_t capacity) override {
    const std::size_t k = std::fread(buffer, 1, capacity, file_);
    if (k == 0 && std::ferror(file_)) throw IoError("read error");
    return k;
  }

 private:
  std::FILE* file_;
};

class GzipSource final : public ByteSource {
 public:
  explicit GzipSource(const std::filesystem::path& path)
      : file_(gzopen(path.c_str(), "rb")) {
    if (!file_) throw IoError("cannot open " + path.string());
  }
  ~GzipSource() override { gzclose(file_); }
  GzipSource(const GzipSource&) = delete;
  GzipSource& operator=(const GzipSource&) = delete;
  std::size_t read(char* buffer, std::size_t capacity) override {
    const auto cap = static_cast<unsigned>(std::min<std::size_t>(capacity, 1u << 30));
    const int k = gzread(file_, buffer, cap);
    if (k < 0) throw IoError("gzip decode error");
    return static_cast<std::size_t>(k);
  }

 private:
  gzFile file_;
};

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

class LineParser {
 public:
  explicit LineParser(const LibsvmOptions& options) : options_(options) {
    offsets_.push_back(0);
  }

  void parse_line(std::string_view line, std::size_t line_no,
                  std::size_t line_offset) {
    if (auto hash = line.find('#'); hash != std::string_view::npos)
      line = line.substr(0, hash);
    std::size_t pos = 0;
    auto next_token = [&](std::size_t& start) -> std::string_view {
      while (pos < line.size() && is_space(line[pos])) ++pos;
      start = pos;
      while (pos < line.size() && !is_space(line[pos])) ++pos;
      return line.substr(start, pos - start);
    };

    std::size_t start = 0;
    const auto label_tok = next_token(start);
    if (label_tok.empty()) return;  // blank or comment-only line
    labels_.push_back(parse_double(label_tok, line_no, line_offset + start));

    long long prev = 0;
    for (;;) {
      const auto tok = next_token(start);
      if (tok.empty()) break;
      const auto colon = tok.find(':');
      if (colon == std::string_view::npos)
        throw ParseError("malformed token '" + std::string(tok) + "'", line_no,
                         line_offset + start);
      const auto key = tok.substr(0, colon);
      if (key == "qid") continue;
      long long idx = 0;
      auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), idx);
      if (ec != std::errc() || ptr != key.data() + key.size() || idx < 1)
        throw ParseError("bad feature index '" + std::string(key) + "'",
                         line_no, line_offset + start);
      if (idx <= prev)
        throw ParseError("feature indices must be ascending", line_no,
                         line_offset + start);
      if (options_.n_features && static_cast<std::size_t>(idx) > *options_.n_features)
        throw ParseError("feature index exceeds pinned dimension", line_no,
                         line_offset + start);
      prev = idx;
      const double v =
          parse_double(tok.substr(colon + 1), line_no, line_offset + start + colon + 1);
      max_index_ = std::max<std::size_t>(max_index_, static_cast<std::size_t>(idx));
      if (v != 0.0) {
        cols_.push_back(static_cast<Index>(idx - 1));
        values_.push_back(v);
      }
    }
    offsets_.push_back(values_.size());
  }

  Dataset finish() {
    Dataset d;
    const std::size_t p = options_.n_features.value_or(max_index_);
    const std::size_t n = labels_.size();
    d.features = SparseRowMatrix(n, p, std::move(offsets_), std::move(cols_),
                                 std::move(values_));
    d.labels = std::move(labels_);
    d.name = options_.name;
    assign_label_kind(d);
    return d;
  }

 private:
  static double parse_double(std::string_view tok, std::size_t line_no,
                             std::size_t offset) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size())
      throw ParseError("malformed number '" + std::string(tok) + "'", line_no, offset);
    if (!std::isfinite(v)) throw ParseError("non-finite value", line_no, offset);
    return v;
  }

  void assign_label_kind(Dataset& d) const {
    if (options_.positive_class) {
      for (auto& y : d.labels) y = (y == *options_.positive_class) ? 1.0 : -1.0;
      d.kind = LabelKind::binary;
      return;
    }
    bool binary_like = true;
    for (double y : d.labels)
      if (y != 1.0 && y != -1.0 && y != 0.0) binary_like = false;
    const bool binary = options_.label_mode == LabelMode::binary ||
                        (options_.label_mode == LabelMode::automatic && binary_like);
    if (!binary) {
      d.kind = LabelKind::real;
      return;
    }
    if (!binary_like)
      throw InvalidArgument("binary label mode requires labels in {-1, 0, +1}");
    for (auto& y : d.labels)
      if (y == 0.0) y = -1.0;
    d.kind = LabelKind::binary;
  }

  const LibsvmOptions& options_;
  std::vector<std::size_t> offsets_;
  std::vector<Index> cols_;
  std::vector<double> values_;
  Vector labels_;
  std::size_t max_index_ = 0;
};

constexpr std::size_t kReadBuffer = std::size_t{64} << 20;

}  // namespace

Dataset parse_libsvm(ByteSource& source, const LibsvmOptions& options) {
  LineParser parser(options);
  std::unique_ptr<char[]> buffer(new char[kReadBuffer]);
  std::string carry;  // partial line spanning buffer refills
  std::size_t line_no = 1;
  std::size_t consumed = 0;     // bytes before buffer start
  std::size_t carry_offset = 0;  // stream offset of carry's first byte

  for (;;) {
    const std::size_t got = source.read(buffer.get(), kReadBuffer);
    if (got == 0) break;
    std::string_view chunk(buffer.get(), got);
    std::size_t start = 0;
    while (start < chunk.size()) {
      const auto nl = chunk.find('\n', start);
      if (nl == std::string_view::npos) {
        if (carry.empty()) carry_offset = consumed + start;
        carry.append(chunk.substr(start));
        break;
      }
      if (!carry.empty()) {
        carry.append(chunk.substr(start, nl - start));
        parser.parse_line(carry, line_no, carry_offset);
        carry.clear();
      } else {
        parser.parse_line(chunk.substr(start, nl - start), line_no, consumed + start);
      }
      ++line_no;
      start = nl + 1;
    }
    consumed += got;
  }
  if (!carry.empty()) parser.parse_line(carry, line_no, carry_offset);
  return parser.finish();
}

Dataset parse_libsvm(std::string_view text, const LibsvmOptions& options) {
  MemorySource src(text);
  return parse_libsvm(src, options);
}

Dataset load_libsvm(const std::filesystem::path& path,
                    const LibsvmOptions& options) {
  unsigned char magic[2] = {0, 0};
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open dataset file " + path.string());
    const std::size_t k = std::fread(magic, 1, 2, f);
    std::fclose(f);
    if (k < 2) magic[0] = magic[1] = 0;
  }
  LibsvmOptions opts = options;
  if (opts.name.empty()) opts.name = path.filename().string();
  if (magic[0] == 0x1f && magic[1] == 0x8b) {
    GzipSource src(path);
    return parse_libsvm(src, opts);
  }
  FileSource src(path);
  return parse_libsvm(src, opts);
}

void write_libsvm(const Dataset& d, std::ostream& out) {
  char buf[64];
  for (std::size_t i = 0; i < d.n(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", d.labels[i]);
    out << buf;
    const auto r = d.features.row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) {
      std::snprintf(buf, sizeof buf, " %u:%.17g", r.cols[k] + 1, r.values[k]);
      out << buf;
    }
    out << '\n';
  }
}

std::filesystem::path resolve_dataset_path(const std::filesystem::path& path) {
  if (path.is_absolute() || std::filesystem::exists(path)) return path;
  if (const char* dir = std::getenv(kDataDirEnv); dir && *dir) {
    auto candidate = std::filesystem::path(dir) / path;
    if (std::filesystem::exists(candidate)) return candidate;
  }
  return path;
}

Dataset normalize_rows(const Dataset& d) {
  Vector scale(d.n(), 1.0);
  for (std::size_t i = 0; i < d.n(); ++i) {
    const double norm = std::sqrt(d.features.row_squared_norm(i));
    // Rows already at unit norm up to rounding are left bit-identical, which
    // makes the operation idempotent.
    const double slack = 8.0 * std::numeric_limits<double>::epsilon() *
                         std::sqrt(static_cast<double>(d.features.row(i).cols.size()) + 1.0);
    if (norm > 0.0 && std::abs(norm - 1.0) > slack) scale[i] = 1.0 / norm;
  }
  Dataset out = d;
  out.features = d.features.scale_rows(scale);
  return out;
}

Dataset append_constant_column(const Dataset& d) {
  std::vector<Triplet> t;
  t.reserve(d.features.nnz() + d.n());
  for (std::size_t i = 0; i < d.n(); ++i) {
    const auto r = d.features.row(i);
    for (std::size_t k = 0; k < r.cols.size(); ++k) t.push_back({i, r.cols[k], r.values[k]});
    t.push_back({i, d.p(), 1.0});
  }
  Dataset out = d;
  out.features = SparseRowMatrix::from_triplets(d.n(), d.p() + 1, std::move(t));
  return out;
}

TrainTestSplit train_test_split(const Dataset& d, double test_fraction,
                                std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0))
    throw InvalidArgument("train_test_split: test_fraction must lie in (0, 1)");
  Rng rng(seed);
  auto perm = rng.permutation(d.n());
  const auto n_test = static_cast<std::size_t>(
      std::llround(test_fraction * static_cast<double>(d.n())));
  TrainTestSplit out;
  out.test_rows.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  out.train_rows.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
  std::sort(out.test_rows.begin(), out.test_rows.end());
  std::sort(out.train_rows.begin(), out.train_rows.end());
  auto take = [&](const IndexArray& rows, const char* suffix) {
    Dataset s;
    s.features = d.features.select_rows(rows);
    s.labels.reserve(rows.size());
    for (auto r : rows) s.labels.push_back(d.labels[r]);
    s.kind = d.kind;
    s.name = d.name + suffix;
    return s;
  };
  out.train = take(out.train_rows, ".train");
  out.test = take(out.test_rows, ".test");
  return out;
}

namespace {

DenseMatrix haar_orthonormal(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix g(rows, cols);
  for (auto& v : g.values()) v = rng.normal();
  auto qr = householder_qr(g);
  // Sign-fix so the distribution is Haar: Q * sign(diag(R)).
  for (std::size_t j = 0; j < cols; ++j)
    if (qr.r(j, j) < 0.0) scal(-1.0, qr.q.col(j));
  return std::move(qr.q);
}

}  // namespace

SyntheticProblem make_synthetic(const SyntheticParams& params) {
  const auto n = params.n;
  const auto p = params.p;
  if (n == 0 || p == 0) throw InvalidArgument("make_synthetic: n and p must be positive");
  if (params.support_size > p)
    throw InvalidArgument("make_synthetic: support_size exceeds p");
  if (!(params.condition_number >= 1.0))
    throw InvalidArgument("make_synthetic: condition_number must be >= 1");
  if (!(params.noise_std >= 0.0))
    throw InvalidArgument("make_synthetic: noise_std must be >= 0");

  Rng rng(params.seed);
  const std::size_t k = std::min(n, p);
  const DenseMatrix u = haar_orthonormal(n, k, rng);
  const DenseMatrix v = haar_orthonormal(p, k, rng);

  Vector sigma(k);
  const double top = std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < k; ++j) {
    const double frac = k == 1 ? 0.0 : static_cast<double>(j) / static_cast<double>(k - 1);
    sigma[j] = top * std::pow(params.condition_number, -0.5 * frac);
  }

  // A = (U diag(sigma)) V^T, assembled row by row.
  DenseMatrix us = u;
  for (std::size_t j = 0; j < k; ++j) scal(sigma[j], us.col(j));
  const DenseMatrix vt = v.transposed();  // k x p
  DenseMatrix a = matmul(us, vt);

  SyntheticProblem out;
  out.w_true.assign(p, 0.0);
  for (auto j : rng.sample_without_replacement(p, params.support_size)) {
    const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
    out.w_true[j] = sign * (1.0 + std::abs(rng.normal()));
  }

  Vector aw(n, 0.0);
  for (std::size_t j = 0; j < p; ++j)
    if (out.w_true[j] != 0.0) axpy(out.w_true[j], a.col(j), aw);

  Dataset d;
  d.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double z = aw[i] + params.noise_std * rng.normal();
    d.labels[i] = params.task == SyntheticTask::lasso ? z : (z >= 0.0 ? 1.0 : -1.0);
  }
  d.kind = params.task == SyntheticTask::lasso ? LabelKind::real : LabelKind::binary;
  d.features = SparseRowMatrix::from_dense(a);
  char name[128];
  std::snprintf(name, sizeof name, "synthetic-%s-n%zu-p%zu-k%g-s%llu",
                params.task == SyntheticTask::lasso ? "lasso" : "logistic", n, p,
                params.condition_number, static_cast<unsigned long long>(params.seed));
  d.name = name;

  out.dataset = std::move(d);
  out.condition_number = params.condition_number;
  out.support_size = params.support_size;
  out.seed = params.seed;
  out.singular_values = std::move(sigma);
  return out;
}

}  // namespace sapphire
