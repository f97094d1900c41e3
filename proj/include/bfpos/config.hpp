// SPDX-License-Identifier: Apache-2.0
//
// bfpos: network-side UE positioning from beamformed RSRP feedback
// Copyright (C) 2026 The bfpos Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef BFPOS_CONFIG_HPP
#define BFPOS_CONFIG_HPP

// Flat `key = value` scenario files. One key per line, `#` starts a comment,
// list values are comma separated, angles are given in degrees and powers in
// dBm/dBi. Keys not present keep the default_scenario() value. Base stations
// are declared with indexed keys (bs1_position, bs1_boresight_deg, ...); when
// any such key appears the default base stations are replaced.

#include "scenario.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

namespace bfpos
{

namespace detail
{

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline double parse_double(const std::string &key, const std::string &text)
{
    const std::string t = trim(text);
    char *end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (t.empty() || end != t.c_str() + t.size() || !std::isfinite(v))
        throw ConfigError("config: key '" + key + "' expects a number, got '" + text + "'");
    return v;
}

inline long long parse_int(const std::string &key, const std::string &text)
{
    const std::string t = trim(text);
    long long v = 0;
    auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (t.empty() || ec != std::errc() || ptr != t.data() + t.size())
        throw ConfigError("config: key '" + key + "' expects an integer, got '" + text + "'");
    return v;
}

inline std::vector<double> parse_list(const std::string &key, const std::string &text, std::size_t expected)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        out.push_back(parse_double(key, item));
    if (out.size() != expected)
        throw ConfigError("config: key '" + key + "' expects " + std::to_string(expected) + " comma-separated values");
    return out;
}

} // namespace detail

/// Parses key/value text into a map; duplicate keys are an error.
inline std::map<std::string, std::string> parse_key_values(std::istream &in)
{
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line))
    {
        ++lineno;
        if (auto h = line.find('#'); h != std::string::npos)
            line.erase(h);
        const std::string t = detail::trim(line);
        if (t.empty())
            continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        std::string key = detail::trim(std::string_view(t).substr(0, eq));
        std::string value = detail::trim(std::string_view(t).substr(eq + 1));
        if (key.empty())
            throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (!kv.emplace(key, value).second)
            throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    }
    return kv;
}

inline ScenarioConfig parse_scenario(std::istream &in)
{
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_list;

    ScenarioConfig c = default_scenario();
    const auto kv = parse_key_values(in);

    std::map<int, BsPose> stations;
    const std::regex bs_key(R"(bs(\d+)_(position|boresight_deg))");

    for (const auto &[key, value] : kv)
    {
        std::smatch m;
        if (std::regex_match(key, m, bs_key))
        {
            const int id = std::stoi(m[1].str());
            BsPose &pose = stations[id];
            pose.bs_id = id;
            if (m[2] == "position")
            {
                auto v = parse_list(key, value, 3);
                pose.position = {v[0], v[1], v[2]};
            }
            else
            {
                auto v = parse_list(key, value, 2);
                pose.boresight_azimuth = deg2rad(v[0]);
                pose.boresight_coelevation = deg2rad(v[1]);
            }
        }
        else if (key == "carrier_hz")
            c.carrier_hz = parse_double(key, value);
        else if (key == "num_subcarriers")
            c.num_subcarriers = static_cast<int>(parse_int(key, value));
        else if (key == "tx_power_dbm")
            c.tx_power_watts = dbm2watt(parse_double(key, value));
        else if (key == "noise_variance_dbm")
            c.noise_variance = dbm2watt(parse_double(key, value));
        else if (key == "noise_variance_watts")
            c.noise_variance = parse_double(key, value);
        else if (key == "feedback_period_s")
            c.feedback_period = parse_double(key, value);
        else if (key == "feedback_k")
            c.feedback_k = static_cast<int>(parse_int(key, value));
        else if (key == "seed")
            c.seed = static_cast<std::uint64_t>(parse_int(key, value));
        else if (key == "runs")
            c.runs = static_cast<int>(parse_int(key, value));
        else if (key == "bs_grid" || key == "ue_grid")
        {
            auto v = parse_list(key, value, 2);
            BeamGridSpec &g = key == "bs_grid" ? c.bs_grid : c.ue_grid;
            g.n_az = static_cast<int>(v[0]);
            g.n_el = static_cast<int>(v[1]);
            if (g.n_az != v[0] || g.n_el != v[1])
                throw ConfigError("config: '" + key + "' expects integer counts");
        }
        else if (key == "bs_span_deg" || key == "ue_span_deg")
        {
            auto v = parse_list(key, value, 2);
            BeamGridSpec &g = key == "bs_span_deg" ? c.bs_grid : c.ue_grid;
            g.span_az = deg2rad(v[0]);
            g.span_el = deg2rad(v[1]);
        }
        else if (key == "bs_beamwidth_deg" || key == "ue_beamwidth_deg")
        {
            auto v = parse_list(key, value, 2);
            BeamGridSpec &g = key == "bs_beamwidth_deg" ? c.bs_grid : c.ue_grid;
            g.width_az = deg2rad(v[0]);
            g.width_el = deg2rad(v[1]);
        }
        else if (key == "bs_peak_gain_dbi")
            c.bs_grid.peak_gain = std::sqrt(db2lin(parse_double(key, value)));
        else if (key == "ue_peak_gain_dbi")
            c.ue_grid.peak_gain = std::sqrt(db2lin(parse_double(key, value)));
        else if (key == "ue_coelevation_deg")
            c.ue_grid.center.theta = deg2rad(parse_double(key, value));
        else if (key == "ue_start")
        {
            auto v = parse_list(key, value, 3);
            c.trajectory.start = {v[0], v[1], v[2]};
        }
        else if (key == "ue_heading_deg")
            c.trajectory.heading = deg2rad(parse_double(key, value));
        else if (key == "ue_speed_mps")
            c.trajectory.speed = parse_double(key, value);
        else if (key == "duration_s")
            c.trajectory.duration = parse_double(key, value);
        else if (key == "dod_accel_psd")
            c.dod_accel_psd = parse_double(key, value);
        else if (key == "pos_accel_psd")
            c.pos_accel_psd = parse_double(key, value);
        else if (key == "dod_rate_init_std")
            c.dod_rate_init_std = parse_double(key, value);
        else if (key == "pos_vel_init_std")
            c.pos_vel_init_std = parse_double(key, value);
        else if (key == "mle_max_iter")
            c.mle_max_iter = static_cast<int>(parse_int(key, value));
        else if (key == "mle_step_tol")
            c.mle_step_tol = parse_double(key, value);
        else if (key == "residual_floor")
            c.residual_floor = parse_double(key, value);
        else if (key == "crb_grid_x" || key == "crb_grid_y")
        {
            auto v = parse_list(key, value, 3);
            if (v[2] < 1 || v[2] != std::floor(v[2]))
                throw ConfigError("config: '" + key + "' count must be a positive integer");
            if (key == "crb_grid_x")
                c.crb_x0 = v[0], c.crb_x1 = v[1], c.crb_nx = static_cast<int>(v[2]);
            else
                c.crb_y0 = v[0], c.crb_y1 = v[1], c.crb_ny = static_cast<int>(v[2]);
        }
        else
            throw ConfigError("config: unknown key '" + key + "'");
    }

    if (!stations.empty())
    {
        c.bs_poses.clear();
        for (const auto &[id, pose] : stations)
        {
            if (kv.find("bs" + std::to_string(id) + "_position") == kv.end())
                throw ConfigError("config: bs" + std::to_string(id) + " has no position");
            c.bs_poses.push_back(pose);
        }
    }
    c.validate();
    return c;
}

inline ScenarioConfig load_scenario(const std::string &path)
{
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file '" + path + "'");
    return parse_scenario(in);
}

/// Writes a config that parses back to `c`.
inline std::string to_config_text(const ScenarioConfig &c)
{
    std::ostringstream o;
    auto line = [&o](const std::string &k, const std::string &v) { o << k << " = " << v << '\n'; };
    auto pair = [](double a, double b) { return format_double(a) + ", " + format_double(b); };
    auto triple = [](double a, double b, double cc) {
        return format_double(a) + ", " + format_double(b) + ", " + format_double(cc);
    };
    line("carrier_hz", format_double(c.carrier_hz));
    line("num_subcarriers", std::to_string(c.num_subcarriers));
    line("tx_power_dbm", format_double(lin2db(c.tx_power_watts / 1e-3)));
    line("noise_variance_watts", format_double(c.noise_variance));
    line("feedback_period_s", format_double(c.feedback_period));
    line("feedback_k", std::to_string(c.feedback_k));
    line("seed", std::to_string(c.seed));
    line("runs", std::to_string(c.runs));
    for (const auto &p : c.bs_poses)
    {
        const std::string pre = "bs" + std::to_string(p.bs_id);
        line(pre + "_position", triple(p.position.x, p.position.y, p.position.z));
        line(pre + "_boresight_deg", pair(rad2deg(p.boresight_azimuth), rad2deg(p.boresight_coelevation)));
    }
    for (auto [name, g] : {std::pair{"bs", &c.bs_grid}, std::pair{"ue", &c.ue_grid}})
    {
        const std::string n = name;
        line(n + "_grid", std::to_string(g->n_az) + ", " + std::to_string(g->n_el));
        line(n + "_span_deg", pair(rad2deg(g->span_az), rad2deg(g->span_el)));
        line(n + "_beamwidth_deg", pair(rad2deg(g->width_az), rad2deg(g->width_el)));
        line(n + "_peak_gain_dbi", format_double(lin2db(g->peak_gain * g->peak_gain)));
    }
    line("ue_coelevation_deg", format_double(rad2deg(c.ue_grid.center.theta)));
    line("ue_start", triple(c.trajectory.start.x, c.trajectory.start.y, c.trajectory.start.z));
    line("ue_heading_deg", format_double(rad2deg(c.trajectory.heading)));
    line("ue_speed_mps", format_double(c.trajectory.speed));
    line("duration_s", format_double(c.trajectory.duration));
    line("dod_accel_psd", format_double(c.dod_accel_psd));
    line("pos_accel_psd", format_double(c.pos_accel_psd));
    line("dod_rate_init_std", format_double(c.dod_rate_init_std));
    line("pos_vel_init_std", format_double(c.pos_vel_init_std));
    line("mle_max_iter", std::to_string(c.mle_max_iter));
    line("mle_step_tol", format_double(c.mle_step_tol));
    line("residual_floor", format_double(c.residual_floor));
    line("crb_grid_x", triple(c.crb_x0, c.crb_x1, c.crb_nx));
    line("crb_grid_y", triple(c.crb_y0, c.crb_y1, c.crb_ny));
    return o.str();
}

} // namespace bfpos

#endif // BFPOS_CONFIG_HPP
