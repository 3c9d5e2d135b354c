#pragma once

#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "astra/index/flat_index.hpp"
#include "astra/retrieval/clients.hpp"
#include "astra/service/config.hpp"

namespace astra::service {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

/// Builds an index from ingest records, embedding the prompt of every record
/// that carries no vector. Supplied vectors are re-normalized.
index::FlatIndex build_index_from_records(std::span<const index::IngestRecord> records,
                                          retrieval::EmbeddingClient& embedder);

/// Runs the `astra` command line. `args` excludes the program name.
/// Returns kExitUsage for bad usage and kExitFailure, after printing the
/// reason to `err`, for any operational failure.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
            const EnvLookup& env = process_env());

}  // namespace astra::service
