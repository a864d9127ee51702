#include "mappo/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>

#include "mappo/algo.hpp"
#include "mappo/config.hpp"

namespace mappo {

namespace {

constexpr char kMagic[8] = {'M', 'A', 'P', 'P', 'O', 'C', 'K', '1'};

template <typename T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& is) {
  T v;
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

void write_checkpoint_records(const std::string& path,
                              const std::vector<CheckpointRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot open '" + path + "' for writing");
  os.write(kMagic, sizeof(kMagic));
  put<std::uint64_t>(os, records.size());
  for (const CheckpointRecord& r : records) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<long>(r.name.size()));
    put<std::uint8_t>(os, r.type);
    switch (r.type) {
      case CheckpointRecord::F64Array:
        put<std::uint64_t>(os, r.f64.size());
        os.write(reinterpret_cast<const char*>(r.f64.data()),
                 static_cast<long>(r.f64.size() * sizeof(double)));
        break;
      case CheckpointRecord::I64:
        put<std::int64_t>(os, r.i64);
        break;
      case CheckpointRecord::String:
        put<std::uint64_t>(os, r.str.size());
        os.write(r.str.data(), static_cast<long>(r.str.size()));
        break;
    }
  }
  if (!os) throw std::runtime_error("checkpoint: write failed for '" + path + "'");
}

std::vector<CheckpointRecord> read_checkpoint_records(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open '" + path + "'");
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: '" + path + "' is not a checkpoint file");
  auto count = get<std::uint64_t>(is);
  std::vector<CheckpointRecord> out;
  out.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    CheckpointRecord r;
    auto nlen = get<std::uint32_t>(is);
    r.name.resize(nlen);
    is.read(r.name.data(), nlen);
    r.type = static_cast<CheckpointRecord::Type>(get<std::uint8_t>(is));
    switch (r.type) {
      case CheckpointRecord::F64Array: {
        auto n = get<std::uint64_t>(is);
        r.f64.resize(n);
        is.read(reinterpret_cast<char*>(r.f64.data()),
                static_cast<long>(n * sizeof(double)));
        break;
      }
      case CheckpointRecord::I64:
        r.i64 = get<std::int64_t>(is);
        break;
      case CheckpointRecord::String: {
        auto n = get<std::uint64_t>(is);
        r.str.resize(n);
        is.read(r.str.data(), static_cast<long>(n));
        break;
      }
      default:
        throw std::runtime_error("checkpoint: unknown record type in '" + path + "'");
    }
    if (!is) throw std::runtime_error("checkpoint: truncated file '" + path + "'");
    out.push_back(std::move(r));
  }
  return out;
}

std::string checkpoint_config_text(const std::string& path) {
  for (const CheckpointRecord& r : read_checkpoint_records(path))
    if (r.name == "meta/config" && r.type == CheckpointRecord::String) return r.str;
  throw std::runtime_error("checkpoint: '" + path + "' has no embedded config");
}

// -- trainer persistence -----------------------------------------------------

void Trainer::save_checkpoint(const std::string& path) const {
  std::vector<CheckpointRecord> recs;
  auto add_str = [&](std::string name, std::string v) {
    CheckpointRecord r;
    r.name = std::move(name);
    r.type = CheckpointRecord::String;
    r.str = std::move(v);
    recs.push_back(std::move(r));
  };
  auto add_i64 = [&](std::string name, long v) {
    CheckpointRecord r;
    r.name = std::move(name);
    r.type = CheckpointRecord::I64;
    r.i64 = v;
    recs.push_back(std::move(r));
  };
  auto add_f64 = [&](std::string name, std::vector<double> v) {
    CheckpointRecord r;
    r.name = std::move(name);
    r.type = CheckpointRecord::F64Array;
    r.f64 = std::move(v);
    recs.push_back(std::move(r));
  };

  add_str("meta/config", serialize_config(cfg_));
  add_i64("meta/iter", iter_);
  add_i64("meta/env_steps", env_steps_);
  add_i64("meta/eval_count", eval_count_);
  add_f64("meta/eval_window", std::vector<double>(eval_window_.begin(), eval_window_.end()));
  add_f64("moments/value", {value_moments_.raw_mean(), value_moments_.raw_mean_sq(),
                            value_moments_.decay(), value_moments_.debias_accum()});
  add_f64("moments/reward", {reward_moments_.raw_mean(), reward_moments_.raw_mean_sq(),
                             reward_moments_.decay(), reward_moments_.debias_accum()});
  add_str("rng/sample", sample_rng_.serialize());
  add_str("rng/eval", eval_rng_.serialize());
  for (size_t e = 0; e < envs_.size(); ++e)
    add_str("rng/env" + std::to_string(e), envs_[e]->rng().serialize());

  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    const PolicyGroup& g = groups_[gi];
    std::string gp = "g" + std::to_string(gi);
    for (const NamedParam& p : g.actor.named_params(gp + "/actor"))
      add_f64("param/" + p.name,
              std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
    for (const NamedParam& p : g.critic.named_params(gp + "/critic"))
      add_f64("param/" + p.name,
              std::vector<double>(p.tensor.data().begin(), p.tensor.data().end()));
    for (int which = 0; which < 2; ++which) {
      const Adam& opt = which == 0 ? g.opt_actor : g.opt_critic;
      std::string op = "adam/" + gp + (which == 0 ? "/actor" : "/critic");
      const AdamState& st = opt.state();
      for (size_t i = 0; i < st.first_moment.size(); ++i) {
        add_f64(op + "/m" + std::to_string(i), st.first_moment[i]);
        add_f64(op + "/v" + std::to_string(i), st.second_moment[i]);
      }
      add_i64(op + "/step", st.step_count);
    }
  }
  write_checkpoint_records(path, recs);
}

void Trainer::load_checkpoint(const std::string& path) {
  std::map<std::string, CheckpointRecord> m;
  for (CheckpointRecord& r : read_checkpoint_records(path)) m[r.name] = std::move(r);
  auto want = [&](const std::string& name) -> const CheckpointRecord& {
    auto it = m.find(name);
    if (it == m.end())
      throw std::runtime_error("checkpoint: missing record '" + name + "' in '" + path + "'");
    return it->second;
  };

  // schedule knobs may change across a resume, model/env identity may not
  TrainConfig stored = parse_config_text(want("meta/config").str);
  auto mismatch = [&](const std::string& what) {
    throw std::runtime_error("checkpoint: " + what +
                             " differs from the stored config; cannot load");
  };
  if (stored.env_name != cfg_.env_name || stored.env_params != cfg_.env_params)
    mismatch("environment");
  if (stored.num_envs != cfg_.num_envs) mismatch("num_envs");
  if (stored.state_mode != cfg_.state_mode || stored.include_agent_id != cfg_.include_agent_id)
    mismatch("critic input layout");
  if (stored.share_policy != cfg_.share_policy) mismatch("share_policy");
  if (stored.recurrent != cfg_.recurrent || stored.stacked_frames != cfg_.stacked_frames ||
      stored.hidden_dim != cfg_.hidden_dim || stored.num_fc != cfg_.num_fc ||
      stored.num_fc_after != cfg_.num_fc_after ||
      stored.use_feature_norm != cfg_.use_feature_norm ||
      stored.activation != cfg_.activation)
    mismatch("network architecture");
  if (stored.seed != cfg_.seed) mismatch("seed");
  if (want("rng/env" + std::to_string(envs_.size() - 1)).type != CheckpointRecord::String ||
      m.count("rng/env" + std::to_string(envs_.size())) != 0)
    throw std::runtime_error("checkpoint: env count mismatch");

  iter_ = want("meta/iter").i64;
  env_steps_ = want("meta/env_steps").i64;
  eval_count_ = want("meta/eval_count").i64;
  const auto& ew = want("meta/eval_window").f64;
  eval_window_.assign(ew.begin(), ew.end());
  const auto& vm = want("moments/value").f64;
  value_moments_.restore(vm[0], vm[1], vm[2], vm[3]);
  const auto& rm = want("moments/reward").f64;
  reward_moments_.restore(rm[0], rm[1], rm[2], rm[3]);
  sample_rng_.deserialize(want("rng/sample").str);
  eval_rng_.deserialize(want("rng/eval").str);
  for (size_t e = 0; e < envs_.size(); ++e)
    envs_[e]->rng().deserialize(want("rng/env" + std::to_string(e)).str);

  auto load_params = [&](const std::vector<NamedParam>& params) {
    for (const NamedParam& p : params) {
      const auto& r = want("param/" + p.name);
      if (static_cast<long>(r.f64.size()) != p.tensor.size())
        throw std::runtime_error("checkpoint: size mismatch for '" + p.name + "'");
      Tensor t = p.tensor;  // handle copy; writes go to the shared storage
      std::copy(r.f64.begin(), r.f64.end(), t.data().begin());
    }
  };
  for (size_t gi = 0; gi < groups_.size(); ++gi) {
    PolicyGroup& g = groups_[gi];
    std::string gp = "g" + std::to_string(gi);
    load_params(g.actor.named_params(gp + "/actor"));
    load_params(g.critic.named_params(gp + "/critic"));
    for (int which = 0; which < 2; ++which) {
      Adam& opt = which == 0 ? g.opt_actor : g.opt_critic;
      std::string op = "adam/" + gp + (which == 0 ? "/actor" : "/critic");
      AdamState& st = opt.state();
      for (size_t i = 0; i < st.first_moment.size(); ++i) {
        const auto& fm = want(op + "/m" + std::to_string(i));
        const auto& sm = want(op + "/v" + std::to_string(i));
        if (fm.f64.size() != st.first_moment[i].size() ||
            sm.f64.size() != st.second_moment[i].size())
          throw std::runtime_error("checkpoint: optimizer state size mismatch");
        st.first_moment[i] = fm.f64;
        st.second_moment[i] = sm.f64;
      }
      st.step_count = want(op + "/step").i64;
    }
  }
}

}  // namespace mappo
