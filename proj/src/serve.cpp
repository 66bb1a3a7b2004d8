#include "ctxforge/serve.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "ctxforge/common.hpp"

namespace ctxforge {

namespace {

int status_for(ErrorKind kind) {
    return (kind == ErrorKind::Parse || kind == ErrorKind::Validation) ? 400 : 500;
}

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

uint64_t nearest_rank(std::vector<uint64_t> samples, double percentile) {
    if (samples.empty()) return 0;
    std::sort(samples.begin(), samples.end());
    auto rank = static_cast<size_t>(
        std::ceil(percentile / 100.0 * static_cast<double>(samples.size())));
    if (rank < 1) rank = 1;
    if (rank > samples.size()) rank = samples.size();
    return samples[rank - 1];
}

struct ServeStats {
    std::vector<uint64_t> latencies;
    uint64_t hits = 0;
    uint64_t token_sum = 0;
    uint64_t retrieval_calls = 0;
    uint64_t evictions = 0;

    void record(const QueryMetrics& m) {
        latencies.push_back(m.elapsed_us);
        if (m.hit) ++hits;
        token_sum += m.context_tokens;
        retrieval_calls += m.retrieved;
        evictions += m.evicted;
    }

    nlohmann::json to_json(const CacheSnapshot& snapshot) const {
        uint64_t n = latencies.size();
        double compression = 0.0;
        size_t corpus_tokens = snapshot.store.total_tokens();
        if (corpus_tokens > 0)
            compression = 1.0 - static_cast<double>(snapshot.total_entry_tokens()) /
                                    static_cast<double>(corpus_tokens);
        return {{"compression_ratio", compression},
                {"evictions", evictions},
                {"hit_rate", n == 0 ? 0.0
                                    : static_cast<double>(hits) / static_cast<double>(n)},
                {"mean_context_tokens",
                 n == 0 ? 0.0
                        : static_cast<double>(token_sum) / static_cast<double>(n)},
                {"p50_latency_us", nearest_rank(latencies, 50.0)},
                {"p99_latency_us", nearest_rank(latencies, 99.0)},
                {"query_count", n},
                {"retrieval_calls", retrieval_calls}};
    }
};

}  // namespace

int run_serve(Engine& engine, const std::string& bind_address) {
    size_t colon = bind_address.rfind(':');
    if (colon == std::string::npos || colon + 1 >= bind_address.size())
        fail(ErrorKind::Validation, "bind address must be host:port, got '" +
                                        bind_address + "'");
    std::string host = bind_address.substr(0, colon);
    if (host.empty()) host = "127.0.0.1";
    int port = 0;
    for (size_t i = colon + 1; i < bind_address.size(); ++i) {
        char c = bind_address[i];
        if (c < '0' || c > '9')
            fail(ErrorKind::Validation, "invalid port in '" + bind_address + "'");
        port = port * 10 + (c - '0');
        if (port > 65535) fail(ErrorKind::Validation, "port out of range");
    }
    if (port < 1) fail(ErrorKind::Validation, "port must be >= 1");

    httplib::Server svr;
    std::mutex mu;
    ServeStats stats;
    uint64_t auto_query_id = 0;

    svr.Post("/query", [&](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object() || !body.contains("text") ||
            !body["text"].is_string()) {
            send_json(res, 400, {{"error", "body must be a JSON object with a string 'text'"}});
            return;
        }
        try {
            std::lock_guard<std::mutex> lock(mu);
            std::string query_id = body.contains("query_id") && body["query_id"].is_string()
                                       ? body["query_id"].get<std::string>()
                                       : "s" + std::to_string(auto_query_id++);
            QueryMetrics metrics;
            AssembledContext ctx = engine.answer(query_id, body["text"], metrics);
            stats.record(metrics);
            send_json(res, 200,
                      {{"context", context_json(ctx)}, {"metrics", metrics_json(metrics)}});
        } catch (const Error& e) {
            send_json(res, status_for(e.kind()), {{"error", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        }
    });

    svr.Get("/stats", [&](const httplib::Request&, httplib::Response& res) {
        std::lock_guard<std::mutex> lock(mu);
        send_json(res, 200, stats.to_json(engine.snapshot()));
    });

    svr.Post("/update", [&](const httplib::Request& req, httplib::Response& res) {
        nlohmann::json body = nlohmann::json::parse(req.body, nullptr, false);
        if (body.is_discarded() || !body.is_object()) {
            send_json(res, 400, {{"error", "body must be a ChangeEvent JSON object"}});
            return;
        }
        try {
            auto events = parse_change_feed(body.dump());
            if (events.size() != 1)
                fail(ErrorKind::Parse, "update body must hold exactly one change event");
            std::lock_guard<std::mutex> lock(mu);
            auto recomputed = engine.apply(events.front());
            nlohmann::json ids = nlohmann::json::array();
            for (const auto& id : recomputed) ids.push_back(id);
            send_json(res, 200,
                      {{"recompute_count", recomputed.size()}, {"recomputed", std::move(ids)}});
        } catch (const Error& e) {
            send_json(res, status_for(e.kind()), {{"error", e.what()}});
        } catch (const std::exception& e) {
            send_json(res, 500, {{"error", e.what()}});
        }
    });

    svr.Get("/healthz", [&](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"ok", true}});
    });

    if (!svr.bind_to_port(host, port)) {
        log_line(LogLevel::Error, "cannot bind " + host + ":" + std::to_string(port));
        return 1;
    }
    std::printf("listening on %s:%d\n", host.c_str(), port);
    std::fflush(stdout);
    return svr.listen_after_bind() ? 0 : 1;
}

}  // namespace ctxforge
