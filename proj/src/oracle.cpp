#include "matex/oracle.hpp"

#include <csignal>
#include <cstring>

#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <nlohmann/json.hpp>

#include "matex/error.hpp"

namespace matex {

using nlohmann::json;

const char* to_string(MaskFill f) noexcept { return f == MaskFill::Mean ? "mean" : "zero"; }

MockOracle::MockOracle(const IntermediatesBundle& bundle) : model_(make_mock_model(mock_options_from_bundle(bundle))) {}

double MockOracle::score(const OracleRequest& request) {
  auto to_flags = [](const std::vector<std::size_t>& indices, std::size_t n, const char* what) {
    std::vector<bool> flags(n, false);
    for (auto i : indices) {
      if (i >= n) throw Error(ErrorCode::OracleFailure, std::string(what) + " index " + std::to_string(i) + " out of range");
      flags[i] = true;
    }
    return flags;
  };
  if (request.patch_mask && request.token_mask)
    throw Error(ErrorCode::OracleFailure, "request carries both a patch and a token mask");
  if (request.token_mask) {
    if (!model_.options.with_text) throw Error(ErrorCode::OracleFailure, "mock model has no text branch");
    return model_.score({}, to_flags(*request.token_mask, model_.tokens.size(), "token"));
  }
  if (request.patch_mask) return model_.score(to_flags(*request.patch_mask, model_.patch_embed.shape[0], "patch"));
  return model_.score();
}

std::unique_ptr<ScoreOracle> mock_oracle(const IntermediatesBundle& bundle) {
  return std::make_unique<MockOracle>(bundle);
}

SubprocessOracle::SubprocessOracle(const std::string& command) {
  std::signal(SIGPIPE, SIG_IGN);
  int to_child[2], from_child[2];
  if (::pipe(to_child) != 0) throw Error(ErrorCode::OracleFailure, "pipe() failed");
  if (::pipe(from_child) != 0) {
    ::close(to_child[0]);
    ::close(to_child[1]);
    throw Error(ErrorCode::OracleFailure, "pipe() failed");
  }
  pid_ = ::fork();
  if (pid_ < 0) throw Error(ErrorCode::OracleFailure, "fork() failed");
  if (pid_ == 0) {
    ::dup2(to_child[0], STDIN_FILENO);
    ::dup2(from_child[1], STDOUT_FILENO);
    ::close(to_child[0]);
    ::close(to_child[1]);
    ::close(from_child[0]);
    ::close(from_child[1]);
    ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(to_child[0]);
  ::close(from_child[1]);
  to_child_ = ::fdopen(to_child[1], "w");
  from_child_ = ::fdopen(from_child[0], "r");
  if (!to_child_ || !from_child_) throw Error(ErrorCode::OracleFailure, "fdopen() failed");
}

SubprocessOracle::~SubprocessOracle() {
  if (to_child_) std::fclose(to_child_);
  if (from_child_) std::fclose(from_child_);
  if (pid_ > 0) {
    int status = 0;
    ::waitpid(pid_, &status, 0);
  }
}

double SubprocessOracle::score(const OracleRequest& request) {
  std::lock_guard lock(mutex_);
  const long id = next_id_++;
  json req{{"id", id}, {"bundle", request.bundle_dir}, {"fill", to_string(request.fill)}};
  if (request.token_mask) req["token_mask"] = *request.token_mask;
  else req["patch_mask"] = request.patch_mask.value_or(std::vector<std::size_t>{});

  const std::string line = req.dump() + "\n";
  if (std::fwrite(line.data(), 1, line.size(), to_child_) != line.size() || std::fflush(to_child_) != 0)
    throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": oracle process is not accepting input");

  std::string reply;
  for (int ch; (ch = std::fgetc(from_child_)) != EOF && ch != '\n';) reply.push_back(static_cast<char>(ch));
  if (reply.empty()) throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": no response");

  json resp;
  try {
    resp = json::parse(reply);
  } catch (const json::parse_error&) {
    throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": malformed response: " + reply);
  }
  if (!resp.is_object() || !resp.contains("id") || !resp["id"].is_number_integer() || resp["id"].get<long>() != id)
    throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": response id mismatch: " + reply);
  if (resp.contains("error"))
    throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": " + resp["error"].dump());
  if (!resp.contains("score") || !resp["score"].is_number())
    throw Error(ErrorCode::OracleFailure, "request " + std::to_string(id) + ": response has no score");
  return resp["score"].get<double>();
}

}  // namespace matex
