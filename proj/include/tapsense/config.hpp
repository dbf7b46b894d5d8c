#pragma once

// JSON documents for geometry, layout and synthesis settings, plus a small
// validator for the subset of JSON Schema the shipped schemas use. Violations
// are reported with JSON-pointer paths.

#include "tapsense/error.hpp"
#include "tapsense/geometry.hpp"
#include "tapsense/simulator.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace tapsense {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schema validation

struct SchemaViolation {
    std::string pointer;  // JSON pointer into the instance, "" = document root
    std::string message;
};

namespace detail {

inline std::string escape_pointer_token(const std::string & s) {
    std::string out;
    for (char c : s) {
        if (c == '~') out += "~0";
        else if (c == '/') out += "~1";
        else out += c;
    }
    return out;
}

inline bool has_type(const Json & v, const std::string & type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    if (type == "number") return v.is_number();
    if (type == "integer") {
        if (v.is_number_integer()) return true;
        if (!v.is_number_float()) return false;
        const double d = v.get<double>();
        return std::isfinite(d) && d == std::floor(d);
    }
    return false;
}

inline void validate_node(const Json & v, const Json & schema, const std::string & at, std::vector<SchemaViolation> & out) {
    if (schema.contains("type")) {
        const auto & t = schema["type"];
        bool ok = false;
        std::string names;
        for (const auto & name : t.is_array() ? t : Json::array({t})) {
            ok = ok || has_type(v, name.get<std::string>());
            names += (names.empty() ? "" : " or ") + name.get<std::string>();
        }
        if (!ok) {
            out.push_back({at, "expected " + names});
            return;
        }
    }
    if (schema.contains("const") && v != schema["const"]) out.push_back({at, "must equal " + schema["const"].dump()});
    if (schema.contains("enum")) {
        bool found = false;
        for (const auto & e : schema["enum"]) found = found || e == v;
        if (!found) out.push_back({at, "must be one of " + schema["enum"].dump()});
    }
    if (v.is_number()) {
        const double d = v.get<double>();
        if (schema.contains("minimum") && d < schema["minimum"].get<double>()) out.push_back({at, "must be >= " + schema["minimum"].dump()});
        if (schema.contains("maximum") && d > schema["maximum"].get<double>()) out.push_back({at, "must be <= " + schema["maximum"].dump()});
        if (schema.contains("exclusiveMinimum") && d <= schema["exclusiveMinimum"].get<double>()) {
            out.push_back({at, "must be > " + schema["exclusiveMinimum"].dump()});
        }
        if (schema.contains("exclusiveMaximum") && d >= schema["exclusiveMaximum"].get<double>()) {
            out.push_back({at, "must be < " + schema["exclusiveMaximum"].dump()});
        }
    }
    if (v.is_string() && schema.contains("minLength") && v.get<std::string>().size() < schema["minLength"].get<size_t>()) {
        out.push_back({at, "string too short"});
    }
    if (v.is_array()) {
        if (schema.contains("minItems") && v.size() < schema["minItems"].get<size_t>()) out.push_back({at, "too few items"});
        if (schema.contains("maxItems") && v.size() > schema["maxItems"].get<size_t>()) out.push_back({at, "too many items"});
        if (schema.contains("items")) {
            for (size_t i = 0; i < v.size(); ++i) validate_node(v[i], schema["items"], at + "/" + std::to_string(i), out);
        }
    }
    if (v.is_object()) {
        if (schema.contains("required")) {
            for (const auto & name : schema["required"]) {
                if (!v.contains(name.get<std::string>())) out.push_back({at + "/" + escape_pointer_token(name.get<std::string>()), "is required"});
            }
        }
        const Json props = schema.value("properties", Json::object());
        for (const auto & [key, child] : v.items()) {
            const std::string where = at + "/" + escape_pointer_token(key);
            if (props.contains(key)) {
                validate_node(child, props[key], where, out);
            } else if (schema.contains("additionalProperties")) {
                const auto & extra = schema["additionalProperties"];
                if (extra.is_boolean() && !extra.get<bool>()) out.push_back({where, "unknown property"});
                else if (extra.is_object()) validate_node(child, extra, where, out);
            }
        }
    }
}

} // namespace detail

inline std::vector<SchemaViolation> schema_violations(const Json & instance, const Json & schema) {
    std::vector<SchemaViolation> out;
    detail::validate_node(instance, schema, "", out);
    return out;
}

/// Throws a Config error listing every violation as "<pointer>: <message>".
inline void validate_against_schema(const Json & instance, const Json & schema, const std::string & what) {
    const auto v = schema_violations(instance, schema);
    if (v.empty()) return;
    std::string msg = what + " does not match its schema:";
    for (const auto & e : v) msg += "\n  " + (e.pointer.empty() ? std::string("/") : e.pointer) + ": " + e.message;
    fail(ErrorKind::Config, msg);
}

inline Json read_json_file(const std::filesystem::path & path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::FileNotFound, path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error & e) {
        fail(ErrorKind::Config, path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Shipped schemas (copies live in schemas/*.schema.json)

namespace schemas {

inline const Json & geometry() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense device geometry",
  "type": "object",
  "required": ["format", "format_version", "screen_width_m", "screen_height_m", "bottom_mic_m", "top_mic_m", "sample_rate_hz", "air_temp_c"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.geometry"},
    "format_version": {"const": 1},
    "name": {"type": "string"},
    "screen_width_m": {"type": "number", "exclusiveMinimum": 0},
    "screen_height_m": {"type": "number", "exclusiveMinimum": 0},
    "bottom_mic_m": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "top_mic_m": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
    "sample_rate_hz": {"type": "integer", "minimum": 8000, "maximum": 384000},
    "air_temp_c": {"type": "number", "minimum": 15, "maximum": 35}
  }
})json");
    return s;
}

inline const Json & layout() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense keyboard layout",
  "type": "object",
  "required": ["format", "format_version", "kind"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.layout"},
    "format_version": {"const": 1},
    "name": {"type": "string"},
    "kind": {"enum": ["pinpad3x3", "qwerty26", "custom"]},
    "orientation": {"enum": ["portrait", "landscape"]},
    "keys": {
      "type": "array",
      "minItems": 1,
      "items": {
        "type": "object",
        "required": ["label", "x_m", "y_m"],
        "additionalProperties": false,
        "properties": {
          "label": {"type": "string", "minLength": 1},
          "x_m": {"type": "number", "minimum": 0},
          "y_m": {"type": "number", "minimum": 0}
        }
      }
    }
  }
})json");
    return s;
}

inline const Json & synth() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense tap synthesis settings",
  "type": "object",
  "required": ["format", "format_version"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.synth"},
    "format_version": {"const": 1},
    "burst_hz": {"type": "number", "exclusiveMinimum": 0},
    "burst_len_samples": {"type": "integer", "minimum": 1},
    "burst_decay_per_sample": {"type": "number", "minimum": 0},
    "burst_amp": {"type": "number", "minimum": 0},
    "mid_hz": {"type": "number", "exclusiveMinimum": 0},
    "mid_len_samples": {"type": "integer", "minimum": 1},
    "mid_decay_per_sample": {"type": "number", "minimum": 0},
    "mid_amp": {"type": "number", "minimum": 0},
    "tail_hz": {"type": "number", "exclusiveMinimum": 0},
    "tail_len_samples": {"type": "integer", "minimum": 1},
    "tail_decay_per_sample": {"type": "number", "minimum": 0},
    "tail_amp": {"type": "number", "minimum": 0},
    "body_hz": {"type": "number", "exclusiveMinimum": 0},
    "body_len_samples": {"type": "integer", "minimum": 1},
    "body_decay_per_sample": {"type": "number", "minimum": 0},
    "body_amp": {"type": "number", "minimum": 0},
    "level_at_1cm": {"type": "number", "exclusiveMinimum": 0},
    "top_attenuation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "bottom_attenuation": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
    "snr_db": {"type": ["number", "null"]},
    "location_fingerprint": {"type": "boolean"},
    "fingerprint_cell_m": {"type": "number", "exclusiveMinimum": 0},
    "fingerprint_mix": {"type": "number", "minimum": 0},
    "subject_effect": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
    "variability": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
    "frequency_variability": {"type": "number", "minimum": 0, "exclusiveMaximum": 0.5},
    "force_range_db": {"type": "number", "minimum": 0, "maximum": 40},
    "onset_jitter_samples": {"type": "integer", "minimum": 0},
    "inter_tap_gap_samples": {"type": "integer", "minimum": 2000}
  }
})json");
    return s;
}

inline const Json & model() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense LDA model",
  "type": "object",
  "required": ["format", "format_version", "class_labels", "dim", "global_mean", "whitener", "projector", "centroids", "log_priors", "ridge"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.lda"},
    "format_version": {"const": 1},
    "class_labels": {"type": "array", "items": {"type": "string"}, "minItems": 2},
    "dim": {"type": "integer", "minimum": 1},
    "global_mean": {"type": "array", "items": {"type": "number"}},
    "whitener": {"$ref": "#/$defs/matrix", "type": "object", "required": ["rows", "cols", "data"]},
    "projector": {"$ref": "#/$defs/matrix", "type": "object", "required": ["rows", "cols", "data"]},
    "centroids": {"$ref": "#/$defs/matrix", "type": "object", "required": ["rows", "cols", "data"]},
    "log_priors": {"type": "array", "items": {"type": "number"}},
    "ridge": {"type": "number", "exclusiveMinimum": 0},
    "metadata": {"type": "object"}
  },
  "$defs": {
    "matrix": {
      "type": "object",
      "description": "row-major",
      "required": ["rows", "cols", "data"],
      "properties": {
        "rows": {"type": "integer", "minimum": 0},
        "cols": {"type": "integer", "minimum": 0},
        "data": {"type": "array", "items": {"type": "number"}}
      }
    }
  }
})json");
    return s;
}

inline const Json & evaluation_report() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense evaluation report",
  "type": "object",
  "required": ["format", "format_version", "protocol", "repetitions", "class_labels", "macro_f1_values", "fold_subjects",
               "macro_f1_mean", "macro_f1_std", "f1_of_mean_pr", "per_class_precision", "per_class_recall", "per_class_f1",
               "confusion", "warnings"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.evaluation"},
    "format_version": {"const": 1},
    "protocol": {"enum": ["split", "loso"]},
    "repetitions": {"type": "integer", "minimum": 1},
    "class_labels": {"type": "array", "items": {"type": "string"}},
    "macro_f1_values": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    "fold_subjects": {"type": "array", "items": {"type": "string"}},
    "macro_f1_mean": {"type": "number", "minimum": 0, "maximum": 1},
    "macro_f1_std": {"type": "number", "minimum": 0},
    "f1_of_mean_pr": {"type": "number", "minimum": 0, "maximum": 1},
    "per_class_precision": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    "per_class_recall": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    "per_class_f1": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
    "confusion": {"type": "array", "items": {"type": "array", "items": {"type": "integer", "minimum": 0}}},
    "warnings": {"type": "array", "items": {"type": "string"}}
  }
})json");
    return s;
}

inline const Json & manifest() {
    static const Json s = Json::parse(R"json({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "tapsense run manifest",
  "type": "object",
  "required": ["format", "format_version", "command", "argv", "config_digest", "seed", "tool_version", "started_utc", "finished_utc", "outputs"],
  "additionalProperties": false,
  "properties": {
    "format": {"const": "tapsense.manifest"},
    "format_version": {"const": 1},
    "command": {"type": "string"},
    "argv": {"type": "array", "items": {"type": "string"}},
    "config_digest": {"type": "string", "minLength": 64},
    "config": {"type": "object"},
    "seed": {"type": "integer", "minimum": 0},
    "tool_version": {"type": "string"},
    "started_utc": {"type": "string"},
    "finished_utc": {"type": "string"},
    "inputs": {"type": "array", "items": {"type": "string"}},
    "outputs": {"type": "array", "items": {"type": "string"}},
    "targets": {"type": "array", "items": {"type": "string"}}
  }
})json");
    return s;
}

} // namespace schemas

// ---------------------------------------------------------------------------
// Geometry

inline Json geometry_to_json(const DeviceGeometry & g, const std::string & name = {}) {
    Json j = {
        {"format", "tapsense.geometry"},
        {"format_version", 1},
        {"screen_width_m", g.screen_width_m},
        {"screen_height_m", g.screen_height_m},
        {"bottom_mic_m", {g.bottom_mic.x, g.bottom_mic.y}},
        {"top_mic_m", {g.top_mic.x, g.top_mic.y}},
        {"sample_rate_hz", g.sample_rate_hz},
        {"air_temp_c", g.air_temp_c},
    };
    if (!name.empty()) j["name"] = name;
    return j;
}

inline DeviceGeometry geometry_from_json(const Json & j) {
    validate_against_schema(j, schemas::geometry(), "geometry");
    DeviceGeometry g;
    g.screen_width_m = j["screen_width_m"].get<double>();
    g.screen_height_m = j["screen_height_m"].get<double>();
    g.bottom_mic = {j["bottom_mic_m"][0].get<double>(), j["bottom_mic_m"][1].get<double>()};
    g.top_mic = {j["top_mic_m"][0].get<double>(), j["top_mic_m"][1].get<double>()};
    g.sample_rate_hz = j["sample_rate_hz"].get<int>();
    g.air_temp_c = j["air_temp_c"].get<double>();
    try {
        validate(g);
        require(g.contains(g.bottom_mic) && g.contains(g.top_mic), "microphones must lie on the device outline");
    } catch (const Error & e) {
        fail(ErrorKind::Config, std::string("geometry: ") + e.what());
    }
    return g;
}

// ---------------------------------------------------------------------------
// Layout

inline Json layout_to_json(const KeyboardLayout & l) {
    const char * kind = l.kind == LayoutKind::PinPad3x3 ? "pinpad3x3" : l.kind == LayoutKind::Qwerty26 ? "qwerty26" : "custom";
    Json j = {{"format", "tapsense.layout"}, {"format_version", 1}, {"kind", kind},
              {"orientation", l.orientation == Orientation::Portrait ? "portrait" : "landscape"}};
    if (l.kind == LayoutKind::Custom) {
        j["keys"] = Json::array();
        for (const auto & [label, p] : l.keys) j["keys"].push_back({{"label", label}, {"x_m", p.x}, {"y_m", p.y}});
    }
    return j;
}

/// Built-in kinds are laid out on the given geometry; custom layouts list
/// their keys explicitly.
inline KeyboardLayout layout_from_json(const Json & j, const DeviceGeometry & g) {
    validate_against_schema(j, schemas::layout(), "layout");
    const auto kind = j["kind"].get<std::string>();
    const auto orientation = j.value("orientation", "portrait") == "landscape" ? Orientation::Landscape : Orientation::Portrait;
    KeyboardLayout l;
    if (kind == "pinpad3x3") {
        l = pin_pad_layout(g, orientation);
    } else if (kind == "qwerty26") {
        l = qwerty_layout(g, orientation);
    } else {
        if (!j.contains("keys")) fail(ErrorKind::Config, "layout: /keys is required for custom layouts");
        l.kind = LayoutKind::Custom;
        l.orientation = orientation;
        for (const auto & k : j["keys"]) l.keys.emplace_back(k["label"].get<std::string>(), Point{k["x_m"].get<double>(), k["y_m"].get<double>()});
    }
    try {
        validate(l, g);
    } catch (const Error & e) {
        fail(ErrorKind::Config, std::string("layout: ") + e.what());
    }
    return l;
}

// ---------------------------------------------------------------------------
// Synthesis settings

struct SimulationSettings {
    TapSynthConfig tap;
    size_t inter_tap_gap = 2500;
};

inline Json synth_to_json(const SimulationSettings & s) {
    const auto & c = s.tap;
    Json j = {
        {"format", "tapsense.synth"},
        {"format_version", 1},
        {"burst_hz", c.burst_hz}, {"burst_len_samples", c.burst_len}, {"burst_decay_per_sample", c.burst_decay}, {"burst_amp", c.burst_amp},
        {"mid_hz", c.mid_hz}, {"mid_len_samples", c.mid_len}, {"mid_decay_per_sample", c.mid_decay}, {"mid_amp", c.mid_amp},
        {"tail_hz", c.tail_hz}, {"tail_len_samples", c.tail_len}, {"tail_decay_per_sample", c.tail_decay}, {"tail_amp", c.tail_amp},
        {"body_hz", c.body_hz}, {"body_len_samples", c.body_len}, {"body_decay_per_sample", c.body_decay}, {"body_amp", c.body_amp},
        {"level_at_1cm", c.level_at_1cm},
        {"top_attenuation", c.top_attenuation},
        {"bottom_attenuation", c.bottom_attenuation},
        {"location_fingerprint", c.location_fingerprint},
        {"fingerprint_cell_m", c.fingerprint_cell_m},
        {"fingerprint_mix", c.fingerprint_mix},
        {"variability", c.variability},
        {"frequency_variability", c.frequency_variability},
        {"force_range_db", c.force_range_db},
        {"onset_jitter_samples", c.onset_jitter},
        {"inter_tap_gap_samples", s.inter_tap_gap},
    };
    j["snr_db"] = std::isfinite(c.snr_db) ? Json(c.snr_db) : Json(nullptr);
    j["subject_effect"] = c.subject_effect ? Json(*c.subject_effect) : Json(nullptr);
    return j;
}

/// Missing fields keep their defaults; "snr_db": null means noiseless.
inline SimulationSettings synth_from_json(const Json & j, int sample_rate_hz) {
    validate_against_schema(j, schemas::synth(), "synth");
    SimulationSettings s;
    auto & c = s.tap;
    auto num = [&](const char * key, double & dst) { if (j.contains(key)) dst = j[key].get<double>(); };
    auto integer = [&](const char * key, int & dst) { if (j.contains(key)) dst = j[key].get<int>(); };
    num("burst_hz", c.burst_hz); integer("burst_len_samples", c.burst_len); num("burst_decay_per_sample", c.burst_decay); num("burst_amp", c.burst_amp);
    num("mid_hz", c.mid_hz); integer("mid_len_samples", c.mid_len); num("mid_decay_per_sample", c.mid_decay); num("mid_amp", c.mid_amp);
    num("tail_hz", c.tail_hz); integer("tail_len_samples", c.tail_len); num("tail_decay_per_sample", c.tail_decay); num("tail_amp", c.tail_amp);
    num("body_hz", c.body_hz); integer("body_len_samples", c.body_len); num("body_decay_per_sample", c.body_decay); num("body_amp", c.body_amp);
    num("level_at_1cm", c.level_at_1cm);
    num("top_attenuation", c.top_attenuation);
    num("bottom_attenuation", c.bottom_attenuation);
    num("fingerprint_cell_m", c.fingerprint_cell_m);
    num("fingerprint_mix", c.fingerprint_mix);
    num("variability", c.variability);
    num("frequency_variability", c.frequency_variability);
    num("force_range_db", c.force_range_db);
    integer("onset_jitter_samples", c.onset_jitter);
    if (j.contains("location_fingerprint")) c.location_fingerprint = j["location_fingerprint"].get<bool>();
    if (j.contains("snr_db")) c.snr_db = j["snr_db"].is_null() ? std::numeric_limits<double>::infinity() : j["snr_db"].get<double>();
    if (j.contains("subject_effect")) {
        c.subject_effect = j["subject_effect"].is_null() ? std::nullopt : std::optional<double>(j["subject_effect"].get<double>());
    }
    if (j.contains("inter_tap_gap_samples")) s.inter_tap_gap = j["inter_tap_gap_samples"].get<size_t>();
    try {
        validate(c, sample_rate_hz);
    } catch (const Error & e) {
        fail(ErrorKind::Config, std::string("synth: ") + e.what());
    }
    return s;
}

} // namespace tapsense
