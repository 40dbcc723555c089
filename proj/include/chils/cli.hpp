/*
 * Copyright (C) 2026 The chils Authors
 * SPDX-License-Identifier: Apache-2.0
 */

#pragma once

// The `chils` command line. `run` is the whole program; tools/chils.cpp only
// forwards argv, so tests can drive every subcommand in-process.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "chils/engine.hpp"
#include "chils/error.hpp"
#include "chils/eval.hpp"
#include "chils/hierarchy.hpp"
#include "chils/labelgen.hpp"
#include "chils/predictions.hpp"
#include "chils/prompts.hpp"
#include "chils/synth.hpp"
#include "chils/tensorio.hpp"

namespace chils::cli {

inline constexpr const char* kToolVersion = "0.1.0";

inline std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[digest[i] >> 4];
        out += hex[digest[i] & 0xf];
    }
    return out;
}

/// Digest of a file, or of manifest.json + data.bin for a bundle directory.
inline std::string digest_input(const std::filesystem::path& p) {
    if (std::filesystem::is_directory(p)) {
        return sha256_hex(detail::read_file(p / "manifest.json") + detail::read_file(p / "data.bin"));
    }
    return sha256_hex(detail::read_file(p));
}

/// Reproduction record written next to every output.
struct RunManifest {
    std::string command;
    std::vector<std::string> args;
    std::vector<std::pair<std::string, std::string>> inputs;  // path, sha256
    nlohmann::ordered_json config = nlohmann::ordered_json::object();

    void add_input(const std::filesystem::path& p) { inputs.emplace_back(p.string(), digest_input(p)); }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["tool"] = "chils";
        j["version"] = kToolVersion;
        j["command"] = command;
        j["args"] = args;
        nlohmann::ordered_json in = nlohmann::ordered_json::object();
        for (const auto& [path, digest] : inputs) in[path] = digest;
        j["inputs"] = std::move(in);
        j["config"] = config;
        return j;
    }

    void write_for(const std::filesystem::path& out) const {
        const auto path = std::filesystem::is_directory(out) ? out / "run_manifest.json"
                                                             : std::filesystem::path(out.string() + ".manifest.json");
        detail::write_file(path, to_json().dump(2) + "\n");
    }
};

inline ReweightVariant reweight_from_string(const std::string& s) {
    if (s == "standard") return ReweightVariant::standard;
    if (s == "none") return ReweightVariant::none;
    if (s == "sub-agg") return ReweightVariant::sub_with_agg_sub;
    if (s == "sup-space") return ReweightVariant::agg_sub_with_sup;
    throw Error("unknown reweight variant \"" + s + "\"");
}

namespace detail {

struct InferenceInputs {
    std::string images, sup_text, sub_text, map;
    std::string prompts;
    std::string prompt_agg = "linear";
    bool no_renormalize = false;
    std::string reweight = "standard";
    std::string agg = "mean";
    double scale = 100.0;
    std::size_t threads = 1;
};

inline void add_inference_options(CLI::App* cmd, InferenceInputs& in) {
    cmd->add_option("--images", in.images, "image embedding bundle")->required();
    cmd->add_option("--sup-text", in.sup_text, "superclass text bundle")->required();
    cmd->add_option("--sub-text", in.sub_text, "subclass text bundle")->required();
    cmd->add_option("--map", in.map, "label map file")->required();
    cmd->add_option("--prompts", in.prompts,
                    "prompt set; text bundles then hold one row per rendered caption");
    cmd->add_option("--prompt-agg", in.prompt_agg, "prompt aggregation with --prompts")
        ->check(CLI::IsMember({"linear", "set"}));
    cmd->add_flag("--no-renormalize", in.no_renormalize, "keep averaged prompt embeddings unnormalized");
    cmd->add_option("--reweight", in.reweight, "reweighting variant")
        ->check(CLI::IsMember({"standard", "none", "sub-agg", "sup-space"}));
    cmd->add_option("--agg", in.agg, "aggregator for sub-agg / sup-space")->check(CLI::IsMember({"mean", "sum"}));
    cmd->add_option("--scale", in.scale, "logit scale");
    cmd->add_option("--threads", in.threads, "worker threads")->check(CLI::PositiveNumber);
}

struct LoadedInputs {
    EmbeddingBundle images;
    LabelMap map;
    ClassTextReps sub_reps, sup_reps;
    InferenceConfig config;
};

inline LoadedInputs load_inference_inputs(const InferenceInputs& in, RunManifest& manifest) {
    LoadedInputs out;
    out.images = load_bundle(in.images);
    out.map = load_label_map(in.map);
    const auto sup = load_bundle(in.sup_text);
    const auto sub = load_bundle(in.sub_text);
    for (const auto& p : {in.images, in.sup_text, in.sub_text, in.map}) manifest.add_input(p);

    const auto sub_names = out.map.subclass_texts();
    if (in.prompts.empty()) {
        out.sup_reps = reps_from_bundle(sup, out.map.superclasses(), "superclass text bundle");
        out.sub_reps = reps_from_bundle(sub, sub_names, "subclass text bundle");
    } else {
        manifest.add_input(in.prompts);
        const auto ps = load_prompt_set(in.prompts);
        const auto mode = in.prompt_agg == "set" ? PromptAggregation::set_based : PromptAggregation::linear_average;
        out.sup_reps = reps_from_captions(sup, ps, out.map.superclasses(), mode, !in.no_renormalize,
                                          "superclass text bundle");
        out.sub_reps = reps_from_captions(sub, ps, sub_names, mode, !in.no_renormalize, "subclass text bundle");
    }
    out.config.logit_scale = in.scale;
    out.config.reweight = reweight_from_string(in.reweight);
    out.config.agg = in.agg == "sum" ? Aggregator::sum : Aggregator::mean;
    out.config.validate();

    manifest.config["logit_scale"] = out.config.logit_scale;
    manifest.config["reweight"] = to_string(out.config.reweight);
    manifest.config["agg"] = to_string(out.config.agg);
    manifest.config["prompt_agg"] = in.prompts.empty() ? "none" : in.prompt_agg;
    manifest.config["renormalize_mean"] = !in.no_renormalize;
    manifest.config["threads"] = in.threads;
    return out;
}

inline std::vector<std::string> read_class_list(const std::filesystem::path& path) {
    const std::string text = chils::detail::read_file(path);
    std::vector<std::string> out;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        while (!line.empty() && (line.back() == '\r' || line.back() == ' ' || line.back() == '\t')) line.pop_back();
        std::size_t b = 0;
        while (b < line.size() && (line[b] == ' ' || line[b] == '\t')) ++b;
        if (b < line.size()) out.push_back(line.substr(b));
    }
    if (out.empty()) throw Error("no classes in " + path.string());
    return out;
}

}  // namespace detail

/// Runs one invocation. `args` excludes the program name.
inline int run(const std::vector<std::string>& args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Zero-shot classification with hierarchical label sets over precomputed embeddings", "chils"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    detail::InferenceInputs predict_in;
    std::string predict_out;
    auto* predict = app.add_subcommand("predict", "per-image baseline and CHiLS predictions");
    detail::add_inference_options(predict, predict_in);
    predict->add_option("--out", predict_out, "predictions file (JSON lines)")->required();

    detail::InferenceInputs compare_in;
    std::string compare_out, compare_labels, compare_methods = "all", compare_format = "csv", dataset = "dataset",
                                             domain;
    auto* compare = app.add_subcommand("compare", "accuracy of baseline, CHiLS variants and the best-possible oracle");
    detail::add_inference_options(compare, compare_in);
    compare->add_option("--labels", compare_labels, "labels.json (superclass index per image)")->required();
    compare->add_option("--methods", compare_methods, "'all' or comma-separated method names");
    compare->add_option("--format", compare_format)->check(CLI::IsMember({"csv", "json", "markdown"}));
    compare->add_option("--dataset", dataset, "dataset name for the report");
    compare->add_option("--domain", domain, "domain name for the report");
    compare->add_option("--out", compare_out, "report file")->required();

    std::string gl_classes, gl_context, gl_backend = "fixture", gl_fixture, gl_endpoint, gl_model = "text-davinci-002",
                                        gl_out;
    int gl_m = kDefaultLabelSetSize, gl_retries = 3, gl_backoff_ms = 1000, gl_max_tokens = 256;
    double gl_temperature = kDefaultTemperature;
    bool gl_append = false, gl_include = false;
    auto* genls = app.add_subcommand("gen-labelsets", "generate a label map from a text-generation backend");
    genls->add_option("--classes", gl_classes, "file with one class name per line")->required();
    genls->add_option("--m", gl_m, "requested label set size")->check(CLI::PositiveNumber);
    genls->add_option("--context", gl_context, "optional context token");
    genls->add_option("--backend", gl_backend)->check(CLI::IsMember({"http", "fixture"}));
    genls->add_option("--fixture", gl_fixture, "fixture file: query text -> response text");
    genls->add_option("--llm-endpoint", gl_endpoint, "completion endpoint URL");
    genls->add_option("--model", gl_model, "model identifier sent to the endpoint");
    genls->add_option("--temperature", gl_temperature);
    genls->add_option("--max-tokens", gl_max_tokens)->check(CLI::PositiveNumber);
    genls->add_option("--retries", gl_retries, "attempts per class")->check(CLI::PositiveNumber);
    genls->add_option("--backoff-ms", gl_backoff_ms, "initial retry delay")->check(CLI::NonNegativeNumber);
    genls->add_flag("--append-superclass", gl_append, "suffix the superclass name to labels lacking it");
    genls->add_flag("--include-superclass", gl_include, "add the superclass itself to its label set");
    genls->add_option("--out", gl_out, "label map file")->required();

    std::string ds_dag, ds_out;
    std::size_t ds_depth = 1;
    auto* dslice = app.add_subcommand("depth-slice", "label map from the nodes at one depth of a taxonomy");
    dslice->add_option("--dag", ds_dag)->required();
    dslice->add_option("--depth", ds_depth)->required();
    dslice->add_option("--out", ds_out)->required();

    std::string en_dag, en_sup, en_out;
    auto* noisy = app.add_subcommand("expand-noisy", "map each superclass node to all of its descendant leaves");
    noisy->add_option("--dag", en_dag)->required();
    noisy->add_option("--superclasses", en_sup, "JSON array of node names")->required();
    noisy->add_option("--out", en_out)->required();

    std::string cal_traces, cal_labels, cal_out, cal_dataset = "dataset", cal_map;
    auto* calib = app.add_subcommand("calibrate", "argmax probabilities of correct vs incorrect predictions");
    calib->add_option("--traces", cal_traces, "predictions file")->required();
    calib->add_option("--labels", cal_labels)->required();
    calib->add_option("--map", cal_map, "label map (class names for the summary)");
    calib->add_option("--dataset", cal_dataset);
    calib->add_option("--out", cal_out)->required();

    std::string sy_spec, sy_out;
    auto* synth = app.add_subcommand("synth", "generate a synthetic instance");
    synth->add_option("--spec", sy_spec, "spec.json")->required();
    synth->add_option("--out", sy_out, "output directory")->required();

    std::vector<std::string> argv_store{"chils"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    RunManifest manifest;
    manifest.args = args;
    try {
        if (*predict) {
            manifest.command = "predict";
            auto in = detail::load_inference_inputs(predict_in, manifest);
            const auto traces =
                predict_chils_batch(in.images, in.map, in.sub_reps, in.sup_reps, in.config, predict_in.threads);
            std::vector<PredictionRecord> records;
            records.reserve(traces.size());
            for (std::size_t i = 0; i < traces.size(); ++i) records.push_back(make_prediction_record(i, traces[i], in.map));
            save_predictions(records, predict_out);
            manifest.write_for(predict_out);
            out << "wrote " << records.size() << " predictions to " << predict_out << "\n";
        } else if (*compare) {
            manifest.command = "compare";
            compare_in.reweight = "standard";
            auto in = detail::load_inference_inputs(compare_in, manifest);
            manifest.config.erase("reweight");
            const auto labels = load_labels(compare_labels);
            manifest.add_input(compare_labels);
            if (labels.size() != in.images.count()) {
                throw Error("labels file has " + std::to_string(labels.size()) + " entries for " +
                            std::to_string(in.images.count()) + " images");
            }
            for (auto l : labels) {
                if (l >= in.map.size()) throw Error("label " + std::to_string(l) + " out of range");
            }
            std::vector<Method> methods;
            if (compare_methods == "all") {
                methods.assign(std::begin(kAllMethods), std::end(kAllMethods));
            } else {
                std::istringstream ms(compare_methods);
                for (std::string tok; std::getline(ms, tok, ',');) methods.push_back(method_from_string(tok));
            }
            const auto traces =
                predict_chils_batch(in.images, in.map, in.sub_reps, in.sup_reps, in.config, compare_in.threads);
            auto preds_for = [&](ReweightVariant v) {
                std::vector<std::size_t> p(traces.size());
                for (std::size_t i = 0; i < traces.size(); ++i) {
                    const auto scores = reweight(traces[i].sub_probs, traces[i].sup_probs, in.map, v, in.config.agg);
                    const auto best = argmax(scores);
                    p[i] = v == ReweightVariant::agg_sub_with_sup ? best : in.map.union_subclasses()[best].parent;
                }
                return p;
            };
            std::vector<std::size_t> baseline(traces.size());
            for (std::size_t i = 0; i < traces.size(); ++i) baseline[i] = traces[i].baseline_superclass;
            std::vector<EvalRecord> records;
            const std::optional<std::string> dom = domain.empty() ? std::nullopt : std::optional(domain);
            for (auto m : methods) {
                double acc = 0.0;
                switch (m) {
                    case Method::baseline: acc = accuracy(baseline, labels); break;
                    case Method::chils_standard: acc = accuracy(preds_for(ReweightVariant::standard), labels); break;
                    case Method::chils_none: acc = accuracy(preds_for(ReweightVariant::none), labels); break;
                    case Method::chils_sub_agg:
                        acc = accuracy(preds_for(ReweightVariant::sub_with_agg_sub), labels);
                        break;
                    case Method::chils_sup_space:
                        acc = accuracy(preds_for(ReweightVariant::agg_sub_with_sup), labels);
                        break;
                    case Method::best_possible:
                        acc = best_possible(baseline, preds_for(ReweightVariant::none), labels);
                        break;
                }
                records.push_back({dataset, dom, m, acc, labels.size()});
            }
            manifest.config["methods"] = compare_methods;
            manifest.config["format"] = compare_format;
            emit_report(records, {}, report_format_from_string(compare_format), compare_out);
            manifest.write_for(compare_out);
            out << render_markdown(records);
        } else if (*genls) {
            manifest.command = "gen-labelsets";
            const auto classes = detail::read_class_list(gl_classes);
            manifest.add_input(gl_classes);
            std::unique_ptr<GenerationBackend> backend;
            if (gl_backend == "fixture") {
                if (gl_fixture.empty()) throw Error("--backend fixture requires --fixture");
                backend = std::make_unique<FixtureBackend>(FixtureBackend::from_file(gl_fixture));
                manifest.add_input(gl_fixture);
            } else {
                if (gl_endpoint.empty()) throw Error("--backend http requires --llm-endpoint");
                auto opts = HttpBackend::options_from_env(gl_endpoint);
                opts.model = gl_model;
                opts.max_tokens = gl_max_tokens;
                backend = std::make_unique<HttpBackend>(std::move(opts));
            }
            const std::optional<std::string> ctx = gl_context.empty() ? std::nullopt : std::optional(gl_context);
            const RetryPolicy retry{gl_retries, std::chrono::milliseconds(gl_backoff_ms)};
            const auto result = generate_label_map(classes, *backend, gl_m, ctx, {gl_append, gl_include},
                                                   gl_temperature, retry);
            save_label_map(result.map, gl_out);
            save_audit(result.audit, gl_out + ".audit.json");
            manifest.config["m"] = gl_m;
            manifest.config["context"] = ctx ? nlohmann::ordered_json(*ctx) : nlohmann::ordered_json();
            manifest.config["backend"] = gl_backend;
            manifest.config["temperature"] = gl_temperature;
            manifest.config["append_superclass"] = gl_append;
            manifest.config["include_superclass"] = gl_include;
            manifest.write_for(gl_out);
            out << "wrote label map with " << result.map.size() << " superclasses to " << gl_out << "\n";
        } else if (*dslice) {
            manifest.command = "depth-slice";
            const auto dag = load_dag(ds_dag);
            manifest.add_input(ds_dag);
            const auto map = slice_at_depth(dag, ds_depth);
            save_label_map(map, ds_out);
            manifest.config["depth"] = ds_depth;
            manifest.write_for(ds_out);
            out << "depth " << ds_depth << ": " << map.size() << " classes, " << map.total_subclasses() << " leaves\n";
        } else if (*noisy) {
            manifest.command = "expand-noisy";
            const auto dag = load_dag(en_dag);
            std::vector<std::string> names;
            try {
                names = chils::detail::parse_json_file(en_sup).get<std::vector<std::string>>();
            } catch (const nlohmann::json::exception& e) {
                throw Error("malformed superclass list " + en_sup + ": " + e.what());
            }
            manifest.add_input(en_dag);
            manifest.add_input(en_sup);
            const auto map = expand_noisy(dag, names);
            save_label_map(map, en_out);
            manifest.write_for(en_out);
            out << "wrote " << map.size() << " expanded label sets to " << en_out << "\n";
        } else if (*calib) {
            manifest.command = "calibrate";
            const auto preds = load_predictions(cal_traces);
            const auto labels = load_labels(cal_labels);
            manifest.add_input(cal_traces);
            manifest.add_input(cal_labels);
            std::vector<std::string> names;
            if (!cal_map.empty()) {
                names = load_label_map(cal_map).superclasses();
                manifest.add_input(cal_map);
            }
            std::vector<std::vector<double>> probs;
            for (const auto& p : preds) probs.push_back(p.sup_probs);
            const auto summary = calibration_split(probs, labels, names, cal_dataset);
            chils::detail::ensure_parent_dir(cal_out);
            chils::detail::write_file(cal_out, calibration_to_json(summary).dump(2) + "\n");
            manifest.write_for(cal_out);
            out << "mean correct " << chils::detail::opt_fixed(summary.mean_correct()) << ", mean incorrect "
                << chils::detail::opt_fixed(summary.mean_incorrect()) << "\n";
        } else if (*synth) {
            manifest.command = "synth";
            const auto spec = synthetic_spec_from_json(chils::detail::parse_json_file(sy_spec));
            manifest.add_input(sy_spec);
            const auto inst = generate(spec);
            save_instance(inst, spec, sy_out);
            manifest.config = synthetic_spec_to_json(spec);
            manifest.write_for(sy_out);
            out << "wrote " << inst.images.count() << " images to " << sy_out << "\n";
        }
    } catch (const Error& e) {
        err << "chils: error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "chils: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace chils::cli
