#pragma once

#include <cstddef>
#include <cstdio>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "matex/bundle.hpp"
#include "matex/mock.hpp"

namespace matex {

enum class MaskFill { Zero, Mean };
const char* to_string(MaskFill f) noexcept;

// One masked re-scoring query. Exactly one of patch_mask / token_mask is set;
// both empty lists mean "score the unmodified input".
struct OracleRequest {
  std::string bundle_dir;
  std::optional<std::vector<std::size_t>> patch_mask;
  std::optional<std::vector<std::size_t>> token_mask;
  MaskFill fill = MaskFill::Zero;
};

class ScoreOracle {
 public:
  virtual ~ScoreOracle() = default;
  virtual double score(const OracleRequest& request) = 0;
  virtual bool supports_tokens() const { return true; }
  virtual MaskFill preferred_fill() const { return MaskFill::Zero; }
};

// Answers by re-evaluating the linear mock model regenerated from the bundle's seed.
class MockOracle final : public ScoreOracle {
 public:
  explicit MockOracle(const IntermediatesBundle& bundle);
  double score(const OracleRequest& request) override;
  bool supports_tokens() const override { return model_.options.with_text; }
  const MockModel& model() const noexcept { return model_; }

 private:
  MockModel model_;
};

std::unique_ptr<ScoreOracle> mock_oracle(const IntermediatesBundle& bundle);

// Talks line-delimited JSON to a child process (`/bin/sh -c command`).
// Requests are serialized; responses must echo the request id.
class SubprocessOracle final : public ScoreOracle {
 public:
  explicit SubprocessOracle(const std::string& command);
  ~SubprocessOracle() override;
  SubprocessOracle(const SubprocessOracle&) = delete;
  SubprocessOracle& operator=(const SubprocessOracle&) = delete;

  double score(const OracleRequest& request) override;
  MaskFill preferred_fill() const override { return MaskFill::Mean; }

 private:
  std::mutex mutex_;
  int pid_ = -1;
  std::FILE* to_child_ = nullptr;
  std::FILE* from_child_ = nullptr;
  long next_id_ = 0;
};

}  // namespace matex
