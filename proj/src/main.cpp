#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "ctxforge/cache.hpp"
#include "ctxforge/common.hpp"
#include "ctxforge/config.hpp"
#include "ctxforge/corpus.hpp"
#include "ctxforge/hybrid.hpp"
#include "ctxforge/policy.hpp"
#include "ctxforge/replay.hpp"
#include "ctxforge/serve.hpp"
#include "ctxforge/summarize.hpp"
#include "ctxforge/syncorpus.hpp"

namespace {

using namespace ctxforge;

// Precedence: --config file, then the config frozen inside the snapshot,
// then built-in defaults. --seed and --ablate are applied on top.
EngineConfig resolve_config(const std::string& config_path, const std::string& stored_json,
                            const std::string& ablate, std::optional<uint64_t> seed) {
    EngineConfig cfg;
    if (!config_path.empty()) {
        cfg = load_engine_config(config_path);
    } else if (!stored_json.empty()) {
        cfg = parse_engine_config(stored_json);
    }
    if (seed) cfg.seed = *seed;
    if (!ablate.empty()) cfg.apply_ablation(ablate);
    cfg.validate();
    return cfg;
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open for writing: " + path);
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) fail(ErrorKind::Io, "write failed: " + path);
}

void print_json(const nlohmann::json& j) { std::printf("%s\n", j.dump().c_str()); }

void run_build(const std::string& corpus_path, const std::string& config_path,
               const std::string& out_path, const std::string& ablate,
               std::optional<uint64_t> seed) {
    CorpusStore store = load_corpus_jsonl(corpus_path);
    EngineConfig cfg = resolve_config(config_path, "", ablate, seed);
    Engine engine = Engine::build(store, cfg);
    const CacheSnapshot& snap = engine.snapshot();
    std::string bytes = serialize_snapshot(snap);
    write_file(out_path, bytes);
    print_json({
        {"compression_ratio",
         compression_ratio(snap.store.total_tokens(), snap.total_entry_tokens())},
        {"docs", snap.store.size()},
        {"entries", snap.entry_count()},
        {"nodes", snap.store.total_nodes()},
        {"segments", snap.segments.size()},
        {"snapshot_digest", to_hex(fnv1a64(bytes))},
    });
}

void run_query(const std::string& snapshot_path, const std::string& query_id,
               const std::string& query_text, const std::string& config_path,
               const std::string& ablate, std::optional<uint64_t> seed) {
    CacheSnapshot snap = load_snapshot(snapshot_path);
    EngineConfig cfg = resolve_config(config_path, snap.config_json, ablate, seed);
    Engine engine(std::move(snap), cfg);
    QueryMetrics metrics;
    AssembledContext ctx = engine.answer(query_id, query_text, metrics);
    print_json({{"context", context_json(ctx)}, {"metrics", metrics_json(metrics)}});
}

const char* op_name(ChangeEvent::Op op) {
    switch (op) {
        case ChangeEvent::Op::Add: return "add";
        case ChangeEvent::Op::Edit: return "edit";
        default: return "delete";
    }
}

void run_update(const std::string& snapshot_path, const std::string& changes_path,
                const std::string& out_path, const std::string& config_path,
                std::optional<uint64_t> seed) {
    std::vector<ChangeEvent> events = load_change_feed(changes_path);
    CacheSnapshot snap = load_snapshot(snapshot_path);
    EngineConfig cfg = resolve_config(config_path, snap.config_json, "", seed);
    Engine engine(std::move(snap), cfg);
    nlohmann::json rows = nlohmann::json::array();
    size_t total = 0;
    for (const ChangeEvent& event : events) {
        std::vector<std::string> recomputed = engine.apply(event);
        total += recomputed.size();
        rows.push_back({{"doc_id", event.doc.doc_id},
                        {"op", op_name(event.op)},
                        {"recomputed", recomputed.size()}});
    }
    const std::string& dest = out_path.empty() ? snapshot_path : out_path;
    save_snapshot(engine.snapshot(), dest);
    print_json({{"events", rows}, {"recomputed_total", total}, {"snapshot", dest}});
}

void run_replay(const std::string& snapshot_path, const std::string& trace_path,
                const std::string& out_path, const std::string& config_path,
                const std::string& ablate, std::optional<uint64_t> seed) {
    std::vector<TraceRecord> trace = load_trace_jsonl(trace_path);
    CacheSnapshot snap = load_snapshot(snapshot_path);
    EngineConfig cfg = resolve_config(config_path, snap.config_json, ablate, seed);
    Engine engine(std::move(snap), cfg);
    ReplayReport report = run_replay(engine, trace);
    nlohmann::json j = report_json(report);
    if (!out_path.empty()) write_file(out_path, j.dump(2) + "\n");
    print_json(j["aggregates"]);
}

void run_train_policy(const std::string& spec_path, const std::string& ppo_path,
                      const std::string& out_path, double lambda_cost,
                      std::optional<uint64_t> seed) {
    CorpusSpec spec;
    if (!spec_path.empty()) spec = load_corpus_spec(spec_path);
    spec.validate();
    PpoConfig ppo;
    if (!ppo_path.empty()) ppo = load_ppo_config(ppo_path);
    if (seed) ppo.seed = *seed;
    auto env = make_training_env(spec, lambda_cost);
    TrainLog log;
    PolicyParams params = ppo_train_env(*env, ppo, &log);
    save_policy(params, out_path);
    double final_return =
        log.batch_mean_return.empty() ? 0.0 : log.batch_mean_return.back();
    print_json({{"batches", log.batch_mean_return.size()},
                {"episodes", ppo.episodes},
                {"final_mean_return", final_return},
                {"policy", out_path}});
}

int run_serve_cmd(const std::string& snapshot_path, const std::string& bind,
                  const std::string& config_path, const std::string& ablate,
                  std::optional<uint64_t> seed) {
    CacheSnapshot snap = load_snapshot(snapshot_path);
    EngineConfig cfg = resolve_config(config_path, snap.config_json, ablate, seed);
    Engine engine(std::move(snap), cfg);
    return run_serve(engine, bind);
}

void run_gen(const std::string& spec_path, const std::string& out_dir,
             std::optional<uint64_t> seed) {
    CorpusSpec spec;
    if (!spec_path.empty()) spec = load_corpus_spec(spec_path);
    if (seed) spec.seed = *seed;
    spec.validate();
    GeneratedCorpus gen = generate(spec);
    std::filesystem::create_directories(out_dir);
    write_file(out_dir + "/corpus.jsonl", gen.corpus_jsonl);
    write_file(out_dir + "/trace.jsonl", gen.trace_jsonl);
    write_file(out_dir + "/truth.jsonl", gen.truth_jsonl);
    print_json({{"bucket_collision_rate", gen.bucket_collision_rate},
                {"docs", gen.store.size()},
                {"out_dir", out_dir},
                {"trace_queries", gen.trace.size()}});
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-budgeted context cache engine"};
    app.require_subcommand(1);
    int exit_code = 0;

    std::string corpus_path, config_path, out_path, snapshot_path, ablate;
    std::string query_id = "q0", query_text, changes_path, trace_path;
    std::string spec_path, ppo_path, bind = "127.0.0.1:8787", out_dir;
    double lambda_cost = 1.0;
    uint64_t seed_val = 0;

    auto seed_of = [&](CLI::Option* opt) {
        return opt->count() ? std::optional<uint64_t>(seed_val) : std::nullopt;
    };

    CLI::App* build = app.add_subcommand("build", "compress a corpus into a cache snapshot");
    build->add_option("corpus", corpus_path, "corpus JSONL path")->required();
    build->add_option("--config", config_path, "engine config JSON path");
    build->add_option("--out", out_path, "snapshot output path")->required();
    build->add_option("--ablate", ablate, "no-rank, no-hier or no-policy");
    auto* build_seed = build->add_option("--seed", seed_val, "override config seed");
    build->callback([&] {
        run_build(corpus_path, config_path, out_path, ablate, seed_of(build_seed));
    });

    CLI::App* query = app.add_subcommand("query", "answer one query against a snapshot");
    query->add_option("text", query_text, "query text")->required();
    query->add_option("--snapshot", snapshot_path, "snapshot path")->required();
    query->add_option("--id", query_id, "query id for the output records");
    query->add_option("--config", config_path, "engine config JSON path");
    query->add_option("--ablate", ablate, "no-rank, no-hier or no-policy");
    auto* query_seed = query->add_option("--seed", seed_val, "override config seed");
    query->callback([&] {
        run_query(snapshot_path, query_id, query_text, config_path, ablate,
                  seed_of(query_seed));
    });

    CLI::App* update = app.add_subcommand("update", "apply a change feed to a snapshot");
    update->add_option("changes", changes_path, "change feed JSONL path")->required();
    update->add_option("--snapshot", snapshot_path, "snapshot path")->required();
    update->add_option("--out", out_path, "output snapshot path (default: in place)");
    update->add_option("--config", config_path, "engine config JSON path");
    auto* update_seed = update->add_option("--seed", seed_val, "override config seed");
    update->callback([&] {
        run_update(snapshot_path, changes_path, out_path, config_path,
                   seed_of(update_seed));
    });

    CLI::App* replay = app.add_subcommand("replay", "replay a query trace and report metrics");
    replay->add_option("trace", trace_path, "trace JSONL path")->required();
    replay->add_option("--snapshot", snapshot_path, "snapshot path")->required();
    replay->add_option("--out", out_path, "report JSON output path");
    replay->add_option("--config", config_path, "engine config JSON path");
    replay->add_option("--ablate", ablate, "no-rank, no-hier or no-policy");
    auto* replay_seed = replay->add_option("--seed", seed_val, "override config seed");
    replay->callback([&] {
        run_replay(snapshot_path, trace_path, out_path, config_path, ablate,
                   seed_of(replay_seed));
    });

    CLI::App* train = app.add_subcommand("train-policy", "train the compression policy");
    train->add_option("spec", spec_path, "corpus spec JSON path (default spec otherwise)");
    train->add_option("--ppo", ppo_path, "PPO config JSON path");
    train->add_option("--out", out_path, "policy output path")->required();
    train->add_option("--lambda", lambda_cost, "token cost weight in the reward");
    auto* train_seed = train->add_option("--seed", seed_val, "override PPO seed");
    train->callback([&] {
        run_train_policy(spec_path, ppo_path, out_path, lambda_cost, seed_of(train_seed));
    });

    CLI::App* serve = app.add_subcommand("serve", "serve a snapshot over HTTP");
    serve->add_option("bind", bind, "host:port (default 127.0.0.1:8787)");
    serve->add_option("--snapshot", snapshot_path, "snapshot path")->required();
    serve->add_option("--config", config_path, "engine config JSON path");
    serve->add_option("--ablate", ablate, "no-rank, no-hier or no-policy");
    auto* serve_seed = serve->add_option("--seed", seed_val, "override config seed");
    serve->callback([&] {
        exit_code = run_serve_cmd(snapshot_path, bind, config_path, ablate,
                                  seed_of(serve_seed));
    });

    CLI::App* gen = app.add_subcommand("gen", "generate a synthetic corpus, trace and truth");
    gen->add_option("--spec", spec_path, "corpus spec JSON path (default spec otherwise)");
    gen->add_option("--out-dir", out_dir, "output directory")->required();
    auto* gen_seed = gen->add_option("--seed", seed_val, "override spec seed");
    gen->callback([&] { run_gen(spec_path, out_dir, seed_of(gen_seed)); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const ctxforge::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return e.kind() == ctxforge::ErrorKind::Io ? 2 : 1;
    }
    return exit_code;
}
