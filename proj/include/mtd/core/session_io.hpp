#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "mtd/core/error.hpp"
#include "mtd/core/format.hpp"
#include "mtd/core/types.hpp"

// Session directory layout:
//   session.json  metadata (participant, index, modality, assistance, montage,
//                 EEG rate, stream file names, format_version)
//   eeg.f32       little-endian float32, channel-major
//   kin.csv       header t,x,y,z
//   events.csv    header trial,target,condition,t_rest,t_indication,t_target,t_reset,t_end

namespace mtd::io {

inline constexpr int kSessionFormatVersion = 1;

namespace detail {

inline std::string kin_csv(const KinematicStream& kin) {
  std::string out = "t,x,y,z\n";
  for (std::size_t i = 0; i < kin.size(); ++i) {
    out += fmt::num(kin.timestamps_s[i]);
    for (double v : kin.positions_m[i]) {
      out += ',';
      out += fmt::num(v);
    }
    out += '\n';
  }
  return out;
}

inline std::string events_csv(const std::vector<TrialEvent>& trials) {
  std::string out = "trial,target,condition,t_rest,t_indication,t_target,t_reset,t_end\n";
  for (const auto& e : trials) {
    out += std::to_string(e.trial_index) + ',' + std::to_string(e.target_id) + ',' + std::string(to_string(e.condition));
    for (double t : {e.t_rest_s, e.t_indication_s, e.t_target_s, e.t_reset_s, e.t_end_s}) {
      out += ',';
      out += fmt::num(t);
    }
    out += '\n';
  }
  return out;
}

template <class RowFn>
void for_each_csv_row(const std::string& text, std::string_view expected_header, RowFn&& fn) {
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string_view line(text.data() + pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = nl + 1;
    if (header) {
      require(line == expected_header, ErrorKind::DataError,
              "unexpected CSV header '" + std::string(line) + "', want '" + std::string(expected_header) + "'");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    fn(fmt::split(line));
  }
  require(!header, ErrorKind::DataError, "CSV file is empty");
}

}  // namespace detail

/// Extra keys (config hash and the like) are appended to session.json.
inline void write_session(const SessionDataset& s, const std::filesystem::path& dir,
                          const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json meta;
  meta["format_version"] = kSessionFormatVersion;
  meta["participant_id"] = s.participant_id;
  meta["session_index"] = s.session_index;
  meta["modality"] = std::string(to_string(s.modality));
  meta["assistance_fraction"] = s.assistance_fraction;
  meta["montage"] = {{"name", s.montage.name()}, {"channels", s.montage.channels()}};
  meta["eeg"] = {{"file", "eeg.f32"},
                 {"sample_rate_hz", s.eeg.sample_rate_hz()},
                 {"start_time_s", s.eeg.start_time_s()},
                 {"samples", s.eeg.samples()}};
  meta["kinematics"] = {{"file", "kin.csv"}};
  meta["events"] = {{"file", "events.csv"}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  fmt::write_file((dir / "session.json").string(), meta.dump(2) + "\n");

  std::string blob;
  blob.reserve(s.eeg.data().size() * 4);
  for (double v : s.eeg.data()) fmt::put_f32(blob, static_cast<float>(v));
  fmt::write_file((dir / "eeg.f32").string(), blob);
  fmt::write_file((dir / "kin.csv").string(), detail::kin_csv(s.kin));
  fmt::write_file((dir / "events.csv").string(), detail::events_csv(s.trials));
}

inline SessionDataset read_session(const std::filesystem::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(fmt::read_file((dir / "session.json").string()));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, "bad session.json in " + dir.string() + ": " + e.what());
  }
  SessionDataset s;
  try {
    require(meta.at("format_version").get<int>() == kSessionFormatVersion, ErrorKind::DataError,
            "unsupported session format_version");
    s.participant_id = meta.at("participant_id").get<std::string>();
    s.session_index = meta.at("session_index").get<int>();
    s.modality = parse_modality(meta.at("modality").get<std::string>());
    s.assistance_fraction = meta.at("assistance_fraction").get<double>();
    const auto& m = meta.at("montage");
    auto labels = m.at("channels").get<std::vector<std::string>>();
    std::vector<Point2> pos;
    for (const auto& l : labels) pos.push_back(montages::scalp_position(l).value_or(Point2{}));
    s.montage = Montage(m.at("name").get<std::string>(), std::move(labels), std::move(pos));

    const auto& e = meta.at("eeg");
    const std::string blob = fmt::read_file((dir / e.at("file").get<std::string>()).string());
    require(blob.size() % 4 == 0, ErrorKind::DataError, "eeg.f32 size is not a multiple of 4");
    fmt::ByteReader rd(blob);
    std::vector<double> data(blob.size() / 4);
    for (auto& v : data) v = static_cast<double>(rd.f32());
    require(data.size() == s.montage.size() * e.at("samples").get<std::size_t>(), ErrorKind::ShapeError,
            "eeg.f32 size disagrees with montage and sample count");
    s.eeg = EegStream(e.at("sample_rate_hz").get<double>(), s.montage.size(), std::move(data),
                      e.value("start_time_s", 0.0));

    const std::string kin = fmt::read_file((dir / meta.at("kinematics").at("file").get<std::string>()).string());
    detail::for_each_csv_row(kin, "t,x,y,z", [&](const auto& f) {
      require(f.size() == 4, ErrorKind::DataError, "kin.csv row needs 4 fields");
      s.kin.timestamps_s.push_back(fmt::parse_double(f[0]));
      s.kin.positions_m.push_back({fmt::parse_double(f[1]), fmt::parse_double(f[2]), fmt::parse_double(f[3])});
    });

    const std::string ev = fmt::read_file((dir / meta.at("events").at("file").get<std::string>()).string());
    detail::for_each_csv_row(ev, "trial,target,condition,t_rest,t_indication,t_target,t_reset,t_end",
                             [&](const auto& f) {
                               require(f.size() == 8, ErrorKind::DataError, "events.csv row needs 8 fields");
                               TrialEvent t;
                               t.trial_index = static_cast<int>(fmt::parse_int(f[0]));
                               t.target_id = static_cast<int>(fmt::parse_int(f[1]));
                               t.condition = parse_condition(f[2]);
                               t.t_rest_s = fmt::parse_double(f[3]);
                               t.t_indication_s = fmt::parse_double(f[4]);
                               t.t_target_s = fmt::parse_double(f[5]);
                               t.t_reset_s = fmt::parse_double(f[6]);
                               t.t_end_s = fmt::parse_double(f[7]);
                               s.trials.push_back(t);
                             });
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::DataError, "bad session.json in " + dir.string() + ": " + e.what());
  }
  s.validate();
  return s;
}

}  // namespace mtd::io
