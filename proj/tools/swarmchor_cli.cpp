#include "swarmchor/cli.hpp"
#include "swarmchor/service/server.hpp"

#include <CLI11.hpp>

#include <csignal>

namespace {

swarmchor::Server* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

void add_pipeline_flags(CLI::App* c, swarmchor::cli::PipelineArgs& a) {
  c->add_option("--config", a.config, "JSON config file (defaults built in when omitted)");
  c->add_option("--backend", a.backend, "procedural or http (default from config)")
      ->check(CLI::IsMember({"procedural", "http", "http_chat"}));
  c->add_option("--style", a.style, "procedural style: standard, fast or adversarial")
      ->check(CLI::IsMember({"standard", "fast", "adversarial"}));
  c->add_option("--drones", a.drones, "swarm size")->capture_default_str();
  c->add_option("--beats", a.beats, "beat file: JSON array of seconds or {\"beats\": [...]}");
  c->add_option("--song", a.song, "audio file (.wav is analyzed, anything else is read as beats)");
  c->add_option("--song-id", a.song_id, "song from the config's catalog");
}

}  // namespace

int main(int argc, char** argv) {
  namespace cli = swarmchor::cli;
  CLI::App app{"Music-driven drone swarm choreography with a safety filter"};
  app.require_subcommand(1);

  cli::PipelineArgs pipe;
  auto* p = app.add_subcommand("pipeline", "beats -> generate -> filter -> simulate -> analytics");
  add_pipeline_flags(p, pipe);
  std::uint64_t seed = 0;
  auto* seed_opt = p->add_option("--seed", seed, "backend seed (default from config)");
  p->add_option("--out", pipe.out, "output directory")->capture_default_str();
  p->add_option("--reprompt", pipe.reprompts, "re-prompt text, applied in order (repeatable)");

  cli::FilterArgs filt;
  auto* f = app.add_subcommand("filter", "preprocess and filter a waypoint script");
  f->add_option("--config", filt.config, "JSON config file");
  f->add_option("--script", filt.script, "waypoint script JSON")->required();
  f->add_option("--out", filt.out, "write filtered.json, filtered.csv and certificate.json here");

  cli::AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "plot series over a batch of pipeline runs");
  a->add_option("--config", an.config, "JSON config file");
  a->add_option("--batch", an.batch, "directory of run directories")->required();
  a->add_option("--kind", an.kind, "collision_hist, velocity_bars, rmse_bars or beat_xy")
      ->required()
      ->check(CLI::IsMember({"collision_hist", "velocity_bars", "rmse_bars", "beat_xy"}));
  a->add_option("--out", an.out, "CSV file (stdout when omitted)");

  cli::BatchArgs batch;
  auto* b = app.add_subcommand("batch", "run the pipeline for consecutive seeds into out/run_NNN");
  add_pipeline_flags(b, batch.base);
  b->add_option("--runs", batch.runs, "number of runs")->capture_default_str();
  b->add_option("--seed", batch.seed, "seed of the first run")->capture_default_str();
  b->add_option("--out", batch.base.out, "batch directory")->capture_default_str();
  b->add_option("--reprompt", batch.reprompt, "also rerun each seed with this re-prompt into run_NNN/reprompt");

  std::string serve_config, host = "127.0.0.1";
  int port = 8080;
  auto* s = app.add_subcommand("serve", "HTTP session service");
  s->add_option("--config", serve_config, "JSON config file with the song catalog")->required();
  s->add_option("--host", host, "bind address")->capture_default_str();
  s->add_option("--port", port, "port")->capture_default_str();

  cli::ClickArgs click;
  auto* c = app.add_subcommand("clicktrack", "write a click-track WAV");
  c->add_option("--bpm", click.bpm, "tempo")->capture_default_str();
  c->add_option("--duration", click.duration, "seconds")->capture_default_str();
  c->add_option("--offset", click.offset, "first click, seconds")->capture_default_str();
  c->add_option("--out", click.out, "WAV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : cli::kExitUsage;
  }

  if (*p) {
    if (*seed_opt) pipe.seed = seed;
    return cli::cmd_pipeline(pipe, std::cout, std::cerr);
  }
  if (*f) return cli::cmd_filter(filt, std::cout, std::cerr);
  if (*a) return cli::cmd_analyze(an, std::cout, std::cerr);
  if (*b) return cli::cmd_batch(batch, std::cout, std::cerr);
  if (*c) return cli::cmd_clicktrack(click, std::cout, std::cerr);
  return cli::guarded(std::cerr, [&] {
    swarmchor::Orchestrator orch(swarmchor::load_config(serve_config));
    for (const auto& e : orch.load_errors()) std::cerr << "skipped session " << e << "\n";
    swarmchor::Server server(orch);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << host << ":" << port << "\n" << std::flush;
    if (!server.listen(host, port)) swarmchor::fail(swarmchor::ErrorCode::Io, "cannot listen on port " + std::to_string(port));
    return cli::kExitOk;
  });
}
