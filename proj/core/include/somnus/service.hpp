// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace somnus::service {

inline constexpr int kApiVersion = 1;

struct ServiceConfig {
  std::filesystem::path data_dir;    // cases live under data_dir/cases/<id>/
  std::filesystem::path model_dir;   // a ModelStore directory
  std::filesystem::path static_dir;  // UI bundle served under /ui/; optional
  std::size_t max_upload_bytes = std::size_t{512} << 20;
  unsigned workers = 1;              // concurrent scoring jobs
};

/// HTTP service over the scoring pipeline. Cases are kept on disk, so a
/// restarted service sees every earlier case; a case that was mid-scoring
/// comes back as pending.
class Service {
 public:
  explicit Service(ServiceConfig cfg);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds the listening socket; port 0 picks a free port. Returns the port,
  /// IoError when binding fails.
  int bind(const std::string& host, int port);
  /// Serves until stop(). Call after bind().
  void run();
  /// Stops accepting requests and waits for running jobs to wind down.
  void stop();

  /// Test hook: blocks until no scoring job is queued or running.
  void wait_idle();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws DataError on characters outside the standard alphabet.
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// The API schema document shipped with the service.
std::string_view api_schema();

}  // namespace somnus::service
