#include "swarmchor/backend.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace swarmchor;

namespace {

BeatGrid uniform_beats(std::size_t n, double period = 0.5, double start = 0.5) {
  BeatGrid g;
  for (std::size_t i = 0; i < n; ++i) g.beat_times.push_back(start + period * static_cast<double>(i));
  g.tempo_bpm = 60.0 / period;
  return g;
}

ConstraintsEcho default_constraints() { return {}; }

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

ErrorCode code_of(const std::string& name) {
  for (int c = 0; c <= static_cast<int>(ErrorCode::InvalidArgument); ++c)
    if (to_string(static_cast<ErrorCode>(c)) == name) return static_cast<ErrorCode>(c);
  throw std::invalid_argument(name);
}

}  // namespace

TEST(Prompt, ListsBeatsAndInitialPositions) {
  const auto beats = uniform_beats(20);
  const auto init = default_initial_positions(9, FlightVolume{});
  const auto b = build_initial_prompt(beats, 9, init, default_constraints(), {"Song", "upbeat", "pop"});
  for (double t : beats.beat_times) EXPECT_NE(b.user_text.find(format_beat_time(t)), std::string::npos) << t;
  for (std::size_t i = 0; i < 9; ++i)
    EXPECT_NE(b.user_text.find("drone " + std::to_string(i) + ": ("), std::string::npos);
  EXPECT_EQ(b.beat_times.size(), 20u);
  EXPECT_EQ(b.decimation_stride, 1u);
  EXPECT_NE(b.system_text.find("expert choreographer"), std::string::npos);
  for (const char* kw : {"harmonic", "symmetric", "artistic", "synchronized"})
    EXPECT_NE(b.user_text.find(kw), std::string::npos) << kw;
  EXPECT_NE(b.user_text.find("upbeat"), std::string::npos);
}

TEST(Prompt, EchoesSpeedLimit) {
  const auto b = build_initial_prompt(uniform_beats(4), 2, default_initial_positions(2, {}), default_constraints(), {});
  EXPECT_NE(b.user_text.find("1.0 m/s"), std::string::npos);
  EXPECT_EQ(b.constraints_echo, default_constraints());
}

TEST(Prompt, DecimatesLongSongs) {
  PromptConfig cfg;
  cfg.beat_budget = 200;
  const auto beats = uniform_beats(2000, 0.25);
  const auto b = build_initial_prompt(beats, 3, default_initial_positions(3, {}), default_constraints(), {}, cfg);
  EXPECT_EQ(b.decimation_stride, 10u);
  ASSERT_EQ(b.beat_times.size(), 200u);
  for (std::size_t i = 0; i < b.beat_times.size(); ++i) EXPECT_EQ(b.beat_times[i], beats.beat_times[10 * i]);
  EXPECT_NE(b.user_text.find("every 10th beat"), std::string::npos);

  cfg.max_stride = 4;
  try {
    build_initial_prompt(beats, 3, default_initial_positions(3, {}), default_constraints(), {}, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooManyBeats);
  }
}

TEST(Prompt, RejectsBadPreconditions) {
  const auto init = default_initial_positions(2, {});
  EXPECT_THROW(build_initial_prompt(uniform_beats(1), 2, init, default_constraints(), {}), Error);
  EXPECT_THROW(build_initial_prompt(uniform_beats(4), 0, {}, default_constraints(), {}), Error);
  EXPECT_THROW(build_initial_prompt(uniform_beats(4), 2, {init[0], Vec3(9, 0, 1)}, default_constraints(), {}), Error);
}

TEST(Prompt, Deterministic) {
  const auto beats = uniform_beats(8);
  const auto init = default_initial_positions(4, {});
  EXPECT_EQ(build_initial_prompt(beats, 4, init, default_constraints(), {"a", "b", "c"}),
            build_initial_prompt(beats, 4, init, default_constraints(), {"a", "b", "c"}));
}

TEST(Reprompt, AppendsAndKeepsOriginal) {
  const auto b0 = build_initial_prompt(uniform_beats(4), 2, default_initial_positions(2, {}), default_constraints(), {});
  const auto b1 = build_reprompt(b0, "fly faster");
  EXPECT_EQ(b1.reprompt_history.size(), 1u);
  EXPECT_EQ(b1.user_text, b0.user_text);
  EXPECT_EQ(b1.system_text, b0.system_text);
  const auto b2 = build_reprompt(b1, "go higher");
  EXPECT_EQ(b2.reprompt_history, (std::vector<std::string>{"fly faster", "go higher"}));
  try {
    build_reprompt(b0, "  \n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyReprompt);
  }
}

TEST(Reprompt, ChatMessagesFollowHistoryFlag) {
  auto b = build_initial_prompt(uniform_beats(4), 2, default_initial_positions(2, {}), default_constraints(), {});
  b.response_history.push_back("first answer");
  b = build_reprompt(b, "fly faster");
  auto msgs = chat_messages(b);
  ASSERT_EQ(msgs.size(), 4u);
  EXPECT_EQ(msgs[2].role, "assistant");
  EXPECT_EQ(msgs[3].content, "fly faster");
  b.resend_history = false;
  msgs = chat_messages(b);
  ASSERT_EQ(msgs.size(), 2u);
  EXPECT_NE(msgs[1].content.find("fly faster"), std::string::npos);
}

TEST(Parser, FixtureCorpus) {
  const std::filesystem::path dir = std::filesystem::path(SWARMCHOR_TEST_DATA_DIR) / "responses";
  const auto manifest = nlohmann::json::parse(slurp(dir / "manifest.json"));
  ExpectedShape shape;
  shape.n_drones = manifest["n_drones"].get<std::size_t>();
  shape.beat_times = manifest["beat_times"].get<std::vector<double>>();
  ASSERT_GE(manifest["fixtures"].size(), 12u);
  for (const auto& f : manifest["fixtures"]) {
    const auto name = f["file"].get<std::string>();
    const auto expect = f["expect"].get<std::string>();
    const auto text = slurp(dir / name);
    if (expect == "ok") {
      WaypointScript s;
      ASSERT_NO_THROW(s = parse_waypoint_response(text, shape)) << name;
      ASSERT_EQ(s.size(), shape.n_drones) << name;
      for (const auto& d : s.drones) {
        ASSERT_EQ(d.waypoints.size(), shape.beat_times.size()) << name;
        for (std::size_t b = 0; b < shape.beat_times.size(); ++b) EXPECT_EQ(d.waypoints[b].t, shape.beat_times[b]);
      }
    } else {
      try {
        parse_waypoint_response(text, shape);
        ADD_FAILURE() << name << " accepted";
      } catch (const Error& e) {
        EXPECT_EQ(e.code(), code_of(expect)) << name << ": " << e.what();
      }
    }
  }
}

TEST(Parser, ProseWrappedMatchesBare) {
  const std::string body =
      R"({"drones":[{"id":0,"waypoints":[{"t":0.5,"x":0.1,"y":0.2,"z":1.0},{"t":1.0,"x":0.3,"y":0.2,"z":1.1}]}]})";
  const ExpectedShape shape{1, {0.5, 1.0}, {}};
  EXPECT_EQ(parse_waypoint_response("Here is the plan: " + body + " Enjoy!", shape),
            parse_waypoint_response(body, shape));
  EXPECT_THROW(parse_waypoint_response("no json here", shape), Error);
}

TEST(Parser, RoundTrip) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const std::vector<double> beats{0.5, 1.0, 1.5, 2.0};
    ProceduralOptions opt;
    const auto s = procedural_generate(beats, 5, seed, opt);
    const auto back = parse_waypoint_response(script_to_string(s), {5, beats, s.initial_positions});
    EXPECT_EQ(back, s);
  }
}

TEST(Parser, DifferentTimestampSetsRejected) {
  // Drone 1 carries a different timestamp set of the same size.
  const std::string text =
      R"({"drones":[{"id":0,"waypoints":[{"t":0.5,"x":0,"y":0,"z":1},{"t":1.0,"x":0,"y":0,"z":1}]},)"
      R"({"id":1,"waypoints":[{"t":0.5,"x":1,"y":0,"z":1},{"t":1.1,"x":1,"y":0,"z":1}]}]})";
  EXPECT_THROW(parse_waypoint_response(text, {2, {0.5, 1.0}, {}}), Error);
}

TEST(Procedural, SevenSeedParses) {
  const auto b = build_initial_prompt(uniform_beats(4), 3, default_initial_positions(3, {}), default_constraints(), {});
  GenBackendConfig backend;
  backend.seed = 7;
  const auto text = request_choreography(b, backend);
  const auto s = parse_waypoint_response(text, expected_shape(b));
  EXPECT_EQ(s.size(), 3u);
  for (const auto& d : s.drones) EXPECT_EQ(d.waypoints.size(), 4u);
  EXPECT_EQ(text, request_choreography(b, backend));
}

TEST(Procedural, CircleIsEquallySpaced) {
  ProceduralOptions opt;
  opt.only = Formation::circle;
  const auto s = procedural_generate({0.5, 1.0, 1.5}, 6, 11, opt);
  for (std::size_t b = 0; b < s.beats(); ++b) {
    const auto f = s.formation(b);
    Vec3 c = Vec3::Zero();
    for (const auto& p : f) c += p;
    c /= 6.0;
    std::vector<double> angles;
    for (const auto& p : f) {
      const Vec3 u = p - c;
      EXPECT_NEAR(u.z(), 0.0, 1e-12);
      EXPECT_NEAR(u.norm(), (f[0] - c).norm(), 1e-12);
      angles.push_back(std::atan2(u.y(), u.x()));
    }
    std::sort(angles.begin(), angles.end());
    for (std::size_t i = 0; i < 6; ++i) {
      double gap = (i + 1 < 6 ? angles[i + 1] : angles[0] + 2.0 * M_PI) - angles[i];
      EXPECT_NEAR(gap * 180.0 / M_PI, 60.0, 1e-9);
    }
  }
}

TEST(Procedural, SingleDroneAndVolume) {
  ProceduralOptions opt;
  const auto s = procedural_generate({0.5, 1.0, 1.5, 2.0, 2.5, 3.0}, 1, 5, opt);
  EXPECT_EQ(s.size(), 1u);
  for (std::size_t b = 0; b < s.beats(); ++b) EXPECT_TRUE(opt.volume.contains(s.drones[0].waypoints[b].position));
}

TEST(Procedural, AdversarialHasClosePair) {
  for (std::uint64_t seed : {3u, 4u, 5u, 6u}) {
    ProceduralOptions opt;
    opt.style = ProceduralStyle::adversarial;
    const auto s = procedural_generate({0.5, 1.0, 1.5, 2.0, 2.5}, 9, seed, opt);
    double closest = 1e9;
    for (std::size_t b = 0; b < s.beats(); ++b) {
      const auto f = s.formation(b);
      for (std::size_t i = 0; i < f.size(); ++i)
        for (std::size_t j = i + 1; j < f.size(); ++j) closest = std::min(closest, (f[i] - f[j]).norm());
    }
    EXPECT_LT(closest, opt.min_separation) << seed;
  }
}

TEST(Procedural, StandardFormationsAreSeparated) {
  ProceduralOptions opt;
  std::vector<double> beats;
  for (int i = 1; i <= 20; ++i) beats.push_back(0.5 * i);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto s = procedural_generate(beats, 9, seed, opt);
    for (std::size_t b = 0; b < s.beats(); ++b) {
      const auto f = s.formation(b);
      for (std::size_t i = 0; i < f.size(); ++i)
        for (std::size_t j = i + 1; j < f.size(); ++j) EXPECT_GE((f[i] - f[j]).norm(), 0.3) << seed << " " << b;
    }
  }
}

TEST(Procedural, RepromptKeywordsChangeStyle) {
  auto b = build_initial_prompt(uniform_beats(4), 3, default_initial_positions(3, {}), default_constraints(), {});
  GenBackendConfig backend;
  EXPECT_EQ(procedural_options_for(b, backend).style, ProceduralStyle::standard);
  b = build_reprompt(b, "Fly FASTER and higher");
  const auto opt = procedural_options_for(b, backend);
  EXPECT_EQ(opt.style, ProceduralStyle::fast);
  EXPECT_DOUBLE_EQ(opt.altitude_offset, 0.3);
}

TEST(HttpBackend, UnreachableIsUnavailable) {
  const auto b = build_initial_prompt(uniform_beats(4), 2, default_initial_positions(2, {}), default_constraints(), {});
  GenBackendConfig backend;
  backend.kind = BackendKind::http_chat;
  backend.base_url = "http://127.0.0.1:9";
  backend.model_name = "m";
  backend.timeout_s = 1.0;
  try {
    request_choreography(b, backend);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendUnavailable);
  }
  backend.model_name.clear();
  EXPECT_THROW(request_choreography(b, backend), Error);
}

TEST(HttpBackend, LocalServerRoundTrip) {
  httplib::Server srv;
  nlohmann::json seen;
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = nlohmann::json::parse(req.body);
    seen["auth"] = req.get_header_value("Authorization");
    nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "hello"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  srv.Post("/bad/chat/completions", [](const httplib::Request&, httplib::Response& res) { res.status = 429; });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  ::setenv("SWARMCHOR_TEST_KEY", "secret", 1);
  const auto b = build_initial_prompt(uniform_beats(4), 2, default_initial_positions(2, {}), default_constraints(), {});
  GenBackendConfig backend;
  backend.kind = BackendKind::http_chat;
  backend.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/";
  backend.model_name = "test-model";
  backend.api_key_env_var = "SWARMCHOR_TEST_KEY";
  EXPECT_EQ(request_choreography(b, backend), "hello");
  EXPECT_EQ(seen["model"], "test-model");
  EXPECT_EQ(seen["messages"].size(), 2u);
  EXPECT_EQ(seen["auth"], "Bearer secret");

  backend.base_url = "http://127.0.0.1:" + std::to_string(port) + "/bad";
  try {
    request_choreography(b, backend);
    ADD_FAILURE();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BackendRefused);
  }
  srv.stop();
  th.join();
}
