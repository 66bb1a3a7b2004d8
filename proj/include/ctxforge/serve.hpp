#pragma once

#include <string>

#include "ctxforge/hybrid.hpp"

namespace ctxforge {

// Serves the engine over HTTP until the process is terminated. Endpoints:
//   POST /query  {"text": str, "query_id"?: str} -> {"context", "metrics"}
//   GET  /stats  -> aggregate metrics over the queries served so far
//   POST /update ChangeEvent JSON -> {"recompute_count", "recomputed"}
//   GET  /healthz -> {"ok": true}
// Malformed bodies and rejected changes give 400 with {"error"}; handlers
// serialize on one mutex (queries mutate the cache). Returns nonzero when the
// address cannot be bound.
int run_serve(Engine& engine, const std::string& bind_address);

}  // namespace ctxforge
