#include "pelab/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace pelab::eval {

namespace {

struct EpisodeTally {
  bool captured = false;
  bool timed_out = false;
  bool crashed = false;
  double capture_time_s = 0.0;
};

EpisodeTally play_episode(const policy::PolicyRecord& pursuer, const policy::PolicyRecord& evader,
                          const env::EnvConfig& cfg, uint64_t seed) {
  env::Episode episode(cfg);
  episode.reset(seed);
  policy::RecordActor p_actor, e_actor;
  p_actor.bind(&pursuer, episode.state(env::Role::Pursuer));
  e_actor.bind(&evader, episode.state(env::Role::Evader));

  EpisodeTally tally;
  while (!episode.done()) {
    const control::ActionCommand cmd_p = p_actor.act(episode, env::Role::Pursuer);
    const control::ActionCommand cmd_e = e_actor.act(episode, env::Role::Evader);
    const env::StepOutcome out = episode.step(cmd_p, cmd_e);
    tally.crashed = tally.crashed || out.crashed_pursuer || out.crashed_evader;
    if (out.done) {
      tally.captured = out.captured;
      tally.timed_out = out.timed_out;
      if (out.captured) tally.capture_time_s = episode.time_s();
    }
  }
  return tally;
}

}  // namespace

int worker_count(int jobs) {
  int n = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* cap = std::getenv("PE_ARENA_THREADS")) {
    const int parsed = std::atoi(cap);
    if (parsed > 0) n = parsed;
  }
  return std::max(1, std::min(n, jobs));
}

PairResult evaluate_pair(const policy::PolicyRecord& pursuer, const policy::PolicyRecord& evader,
                         const env::EnvConfig& cfg, int n_episodes, uint64_t seed) {
  if (n_episodes <= 0) throw ValidationError("evaluate_pair: n_episodes must be positive");
  if (pursuer.role != env::Role::Pursuer || evader.role != env::Role::Evader) {
    throw ValidationError("evaluate_pair: records must be one pursuer and one evader");
  }
  pursuer.validate();
  evader.validate();

  std::vector<EpisodeTally> tallies(static_cast<size_t>(n_episodes));
  const int workers = worker_count(n_episodes);
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  std::atomic<int> next{0};
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&]() {
      for (int ep = next.fetch_add(1); ep < n_episodes; ep = next.fetch_add(1)) {
        tallies[static_cast<size_t>(ep)] =
            play_episode(pursuer, evader, cfg, mix_seed(seed, static_cast<uint64_t>(ep)));
      }
    });
  }
  for (auto& t : pool) t.join();

  PairResult result;
  result.pursuer_id = pursuer.id;
  result.evader_id = evader.id;
  result.episodes = n_episodes;
  double capture_time_sum = 0.0;
  for (const EpisodeTally& t : tallies) {
    if (t.captured) {
      ++result.captures;
      capture_time_sum += t.capture_time_s;
    }
    if (t.timed_out) ++result.timeouts;
    if (t.crashed) ++result.crashes;
  }
  result.capture_rate = static_cast<double>(result.captures) / static_cast<double>(n_episodes);
  result.mean_capture_time_s =
      result.captures > 0 ? capture_time_sum / static_cast<double>(result.captures) : 0.0;
  if (result.captures + result.timeouts != result.episodes) {
    throw NumericError("evaluate_pair: capture/timeout counts do not partition the episodes");
  }
  return result;
}

}  // namespace pelab::eval
