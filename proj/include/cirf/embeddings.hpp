#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <semaphore>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cirf/error.hpp"
#include "cirf/hash.hpp"
#include "cirf/http.hpp"
#include "cirf/ndjson_cache.hpp"

namespace cirf {

using EmbeddingVector = Eigen::VectorXd;

inline constexpr int kDefaultDimension = 384;

/// Cosine similarity, clamped to [-1, 1]. Does not assume unit inputs.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.size() != b.size())
    throw DimensionMismatch("cosine of vectors with dimensions " + std::to_string(a.size()) +
                            " and " + std::to_string(b.size()));
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw ZeroVector("cosine of a zero vector");
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

/// Deterministic unit vector for `text`: a splitmix64 stream seeded with the
/// FNV-1a hash of the text supplies `dimension` standard normals, which are
/// then L2-normalized.
inline EmbeddingVector test_embed(std::string_view text, int dimension = kDefaultDimension) {
  Rng rng(fnv1a64(text));
  EmbeddingVector v(dimension);
  for (int i = 0; i < dimension; ++i) v[i] = rng.normal();
  return v / v.norm();
}

class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string name() const = 0;
  virtual int dimension() const = 0;

  /// Index-aligned embeddings. Throws PreconditionError on an empty batch or an
  /// empty entry, DimensionMismatch if the backend disagrees on d.
  std::vector<EmbeddingVector> embed_batch(std::span<const std::string> texts) {
    if (texts.empty()) throw PreconditionError("embed_batch on an empty batch");
    for (const auto& t : texts)
      if (t.empty()) throw PreconditionError("embed_batch with an empty text");
    auto out = embed_impl(texts);
    if (out.size() != texts.size())
      throw ProviderError("provider returned " + std::to_string(out.size()) + " vectors for " +
                          std::to_string(texts.size()) + " texts");
    for (const auto& v : out) {
      if (v.size() != dimension())
        throw DimensionMismatch("provider returned dimension " + std::to_string(v.size()) +
                                ", expected " + std::to_string(dimension()));
      if (!v.allFinite()) throw ProviderError("provider returned a non-finite vector");
    }
    return out;
  }

  EmbeddingVector embed(const std::string& text) {
    return embed_batch(std::span<const std::string>(&text, 1)).front();
  }

 protected:
  virtual std::vector<EmbeddingVector> embed_impl(std::span<const std::string> texts) = 0;
};

/// Whole-text hashing: unrelated strings get unrelated vectors.
class HashEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashEmbeddingProvider(int dimension = kDefaultDimension) : dim_(dimension) {}
  std::string name() const override { return "hash"; }
  int dimension() const override { return dim_; }

 protected:
  std::vector<EmbeddingVector> embed_impl(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(test_embed(t, dim_));
    return out;
  }

 private:
  int dim_;
};

/// Lower-cased alphanumeric runs; "¬" becomes the token "not". CamelCase is
/// kept as a single token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) tokens.push_back(std::move(cur));
    cur.clear();
  };
  for (std::size_t i = 0; i < text.size(); ++i) {
    const unsigned char c = static_cast<unsigned char>(text[i]);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
      if (text.substr(i).starts_with("\xC2\xAC")) tokens.emplace_back("not");
    }
  }
  flush();
  return tokens;
}

/// Offline provider with lexical similarity: the normalized sum of
/// test_embed(token) over the text's tokens. Texts sharing tokens get
/// correlated vectors, which makes clustering meaningful in offline runs.
class HashedBagEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit HashedBagEmbeddingProvider(int dimension = kDefaultDimension) : dim_(dimension) {}
  std::string name() const override { return "hashed-bag"; }
  int dimension() const override { return dim_; }

 protected:
  std::vector<EmbeddingVector> embed_impl(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out;
    out.reserve(texts.size());
    for (const auto& t : texts) {
      const auto tokens = tokenize(t);
      if (tokens.empty()) {
        out.push_back(test_embed(t, dim_));
        continue;
      }
      EmbeddingVector v = EmbeddingVector::Zero(dim_);
      for (const auto& tok : tokens) v += test_embed(tok, dim_);
      const double n = v.norm();
      out.push_back(n > 0.0 ? EmbeddingVector(v / n) : test_embed(t, dim_));
    }
    return out;
  }

 private:
  int dim_;
};

struct RemoteEmbeddingOptions {
  std::string base_url;
  std::string api_key;
  std::string model = "text-embedding-3-small";
  int dimension = kDefaultDimension;
  std::filesystem::path cache_path;  // empty: in-memory only
  int max_in_flight = 4;
  RetryPolicy retry;
  bool replay_only = false;  // misses raise CacheMiss instead of calling out
};

/// POST <base>/embeddings {model, input:[texts]}; responses are cached by text
/// hash in the same newline-JSON format as the completion cache.
class RemoteEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit RemoteEmbeddingProvider(RemoteEmbeddingOptions opts)
      : opts_(std::move(opts)), cache_(opts_.cache_path), slots_(std::max(1, opts_.max_in_flight)) {}

  std::string name() const override { return "remote:" + opts_.model; }
  int dimension() const override { return opts_.dimension; }

  static std::string cache_key(const std::string& model, const std::string& text) {
    return sha256_hex(nlohmann::json{{"model", model}, {"text", text}}.dump());
  }

 protected:
  std::vector<EmbeddingVector> embed_impl(std::span<const std::string> texts) override {
    std::vector<EmbeddingVector> out(texts.size());
    std::vector<std::size_t> missing;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      if (auto hit = cache_.get(cache_key(opts_.model, texts[i])))
        out[i] = vector_from(hit->at("embedding"));
      else
        missing.push_back(i);
    }
    if (missing.empty()) return out;
    if (opts_.replay_only)
      throw CacheMiss("embedding for '" + texts[missing.front()] + "' not in " + opts_.cache_path.string());
    if (opts_.base_url.empty()) throw ProviderError("no embedding base URL configured");

    nlohmann::json input = nlohmann::json::array();
    for (auto i : missing) input.push_back(texts[i]);
    nlohmann::json response;
    {
      slots_.acquire();
      struct Release {
        std::counting_semaphore<64>& s;
        ~Release() { s.release(); }
      } release{slots_};
      try {
        response = post_json(opts_.base_url, "/embeddings",
                             {{"model", opts_.model}, {"input", input}}, opts_.api_key, opts_.retry);
      } catch (const Error& e) {
        throw ProviderError(e.what());
      }
    }
    try {
      const auto& data = response.at("data");
      if (data.size() != missing.size()) throw ProviderError("embedding count mismatch");
      for (std::size_t k = 0; k < missing.size(); ++k) {
        // Entries carry an "index"; fall back to positional order.
        const auto& item = data.at(k);
        const std::size_t pos = item.contains("index") ? item["index"].get<std::size_t>() : k;
        const std::size_t i = missing.at(pos);
        out[i] = vector_from(item.at("embedding"));
        cache_.put({{"key", cache_key(opts_.model, texts[i])},
                    {"model", opts_.model},
                    {"text", texts[i]},
                    {"embedding", item.at("embedding")}});
      }
    } catch (const nlohmann::json::exception& e) {
      throw ProviderError(std::string("malformed embeddings response: ") + e.what());
    }
    return out;
  }

 private:
  static EmbeddingVector vector_from(const nlohmann::json& j) {
    const auto values = j.get<std::vector<double>>();
    return Eigen::Map<const EmbeddingVector>(values.data(), static_cast<Eigen::Index>(values.size()));
  }

  RemoteEmbeddingOptions opts_;
  NdjsonCache cache_;
  std::counting_semaphore<64> slots_;
};

}  // namespace cirf
