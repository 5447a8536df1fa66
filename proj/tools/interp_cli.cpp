// interp command-line front end: packaged validation plus a few demos.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "interp/interp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kValidationFailed = 1, kUsage = 2 };

struct Options {
    bool json_out = false;
    std::uint64_t seed = 42;
    bool attn_probs = false;
    std::size_t top_k = 5;
    std::string out_path;
    bool no_validate = false;
    std::string rename_config;
};

fs::path fixtures_dir() {
    if (const char* env = std::getenv("INTERP_FIXTURES_DIR"); env && *env) return env;
    return INTERP_DEFAULT_FIXTURES_DIR;
}

const interp::Vocabulary& fixture_vocab() {
    static const interp::Vocabulary v = interp::Vocabulary::load(fixtures_dir() / "vocab.txt");
    return v;
}

json read_json_file(const fs::path& p, const std::string& code) {
    std::ifstream in(p);
    if (!in) throw interp::Error(code, "cannot open " + p.string());
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw interp::Error(code, p.string() + ": " + e.what());
    }
}

struct Selected {
    std::string label;
    interp::Model model;
};

// A selector is a dialect id or the path of a model manifest.
Selected select_model(const std::string& selector, const Options& o) {
    for (const auto& spec : interp::list_dialects()) {
        if (spec.name == selector) {
            return {selector, interp::build_model(spec.id, interp::ModelDims::desk(fixture_vocab().size()), o.seed)};
        }
    }
    if (fs::is_regular_file(selector)) return {selector, interp::load_model(selector)};
    throw interp::Error("unknown-model", selector + " is neither a dialect nor a manifest file");
}

interp::RenameConfig rename_for(const interp::Model& m, const Options& o) {
    interp::RenameConfig cfg = interp::builtin_config(m.dialect_id());
    if (!o.rename_config.empty()) cfg = interp::rename_config_from_json(read_json_file(o.rename_config, "bad-rename-config"), cfg);
    return cfg;
}

// Loads and standardizes; the load-time report is surfaced on stderr.
interp::StandardizedModel load(const Selected& sel, const Options& o) {
    auto loaded = interp::load_standardized(std::make_shared<const interp::Model>(sel.model), rename_for(sel.model, o),
                                            {o.attn_probs, !o.no_validate});
    if (loaded.report && !loaded.report->pass()) {
        std::string ids;
        for (const auto& id : loaded.report->failed()) ids += " " + id;
        throw interp::Error("validation-failed", sel.label + ":" + ids);
    }
    return std::move(loaded.model);
}

void require_fixture_vocab(const interp::Model& m) {
    if (m.dims().vocab_size != fixture_vocab().size()) {
        throw interp::Error("vocab-mismatch", "model has " + std::to_string(m.dims().vocab_size) +
                                                  " ids, fixture vocabulary " + std::to_string(fixture_vocab().size()));
    }
}

void emit(const Options& o, const std::string& text) {
    if (o.out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(o.out_path);
    if (!out) throw interp::Error("bad-output", "cannot write " + o.out_path);
    out << text;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string fmt_p(double p) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(4) << p;
    return s.str();
}

std::string quoted_token(const interp::Vocabulary& v, interp::TokenId id) { return "'" + v.token(id) + "'"; }

// terminal columns ~ code points; UTF-8 continuation bytes don't count
std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

std::string pad(std::string s, std::size_t w) {
    const std::size_t n = display_width(s);
    if (n < w) s.append(w - n, ' ');
    return s;
}

// --- run-tests -------------------------------------------------------------

int cmd_run_tests(const std::optional<std::string>& selector, bool all, const std::optional<std::string>& fault_name,
                  const Options& o) {
    if (all == selector.has_value()) throw interp::Error("usage", "give exactly one of a model selector or --all");
    std::optional<interp::Fault> fault;
    if (fault_name) fault = interp::parse_fault(*fault_name);

    std::vector<std::string> selectors;
    if (all) {
        for (const auto& s : interp::list_dialects()) selectors.push_back(s.name);
    } else {
        selectors.push_back(*selector);
    }

    json reports = json::array();
    std::string table;
    bool pass = true;
    for (const auto& name : selectors) {
        const Selected sel = select_model(name, o);
        interp::StandardizedModel sm(std::make_shared<const interp::Model>(sel.model), rename_for(sel.model, o), o.attn_probs);
        if (fault) sm = interp::inject_fault(sm, *fault);
        const interp::ValidationReport report = interp::run_validation(sm);
        pass = pass && report.pass();
        reports.push_back(interp::to_json(report));

        table += sel.label + (fault ? " [" + std::string(interp::to_string(*fault)) + "]" : "") + "  seed " +
                 std::to_string(sel.model.seed()) + "\n";
        for (const auto& c : report.checks) {
            std::string status(interp::to_string(c.status));
            for (auto& ch : status) ch = static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
            table += "  " + status + std::string(6 - status.size(), ' ') + c.id;
            if (!c.message.empty()) table += "  " + c.message;
            table += "\n";
        }
        table += std::string("  overall: ") + (report.pass() ? "pass" : "fail") + "\n";
    }
    emit(o, o.json_out ? dump({{"reports", reports}, {"overall", pass ? "pass" : "fail"}}) : table);
    return pass ? kOk : kValidationFailed;
}

// --- logit-lens ------------------------------------------------------------

int cmd_logit_lens(const std::string& selector, const std::string& prompt, const Options& o) {
    const Selected sel = select_model(selector, o);
    require_fixture_vocab(sel.model);
    const auto& vocab = fixture_vocab();
    const interp::TokenSeq tokens = interp::tokenize(vocab, prompt);
    if (tokens.empty()) throw interp::Error("empty-prompt");
    const interp::StandardizedModel sm = load(sel, o);
    const auto cells = interp::lens_top_k(interp::logit_lens(sm, tokens), o.top_k);

    if (o.json_out) {
        json toks = json::array();
        for (auto id : tokens) toks.push_back(vocab.token(id));
        emit(o, dump({{"model", sel.label}, {"prompt", prompt}, {"tokens", toks}, {"lens", interp::to_json(cells, vocab)}}));
        return kOk;
    }
    std::size_t in_w = 5;
    for (auto id : tokens) in_w = std::max(in_w, display_width(quoted_token(vocab, id)));
    std::string table = pad("layer", 7) + pad("pos", 5) + pad("input", in_w + 2) + " top-" + std::to_string(o.top_k) + "\n";
    for (const auto& c : cells) {
        std::string line = pad(std::to_string(c.layer), 7) + pad(std::to_string(c.position), 5) +
                           pad(quoted_token(vocab, tokens[c.position]), in_w + 2);
        for (const auto& t : c.top) line += " " + quoted_token(vocab, t.id) + " " + fmt_p(t.p);
        table += line + "\n";
    }
    emit(o, table);
    return kOk;
}

// --- zoo list --------------------------------------------------------------

int cmd_zoo_list(const Options& o) {
    json out = json::array();
    std::vector<std::vector<std::string>> rows{{"dialect", "family", "norm", "act", "pos", "layer returns"}};
    for (const auto& s : interp::list_dialects()) {
        std::string returns(interp::to_string(s.layer_returns));
        if (s.layer_returns == interp::ReturnKind::tuple) returns += "(" + std::to_string(s.layer_tuple_arity) + ")";
        const std::string norm = s.norm == interp::NormKind::layer_norm ? "layer-norm" : "rms-norm";
        const std::string act = s.activation == interp::ActivationKind::gelu_tanh ? "gelu-tanh" : "silu";
        const std::string pos = s.positions == interp::PositionKind::learned ? "learned" : "rotary";
        json layout = json::object();
        for (const auto& e : s.layout) layout[e.component] = e.path;
        out.push_back({{"dialect", s.name},
                       {"family", s.family},
                       {"norm", norm},
                       {"activation", act},
                       {"positions", pos},
                       {"layer_returns", interp::to_string(s.layer_returns)},
                       {"layer_tuple_arity", s.layer_returns == interp::ReturnKind::tuple ? s.layer_tuple_arity : 0},
                       {"attn_prob_source", s.attn_prob_source},
                       {"layout", layout}});
        rows.push_back({s.name, s.family, norm, act, pos, returns});
    }
    std::vector<std::size_t> widths(rows.front().size(), 0);
    for (const auto& r : rows)
        for (std::size_t i = 0; i < r.size(); ++i) widths[i] = std::max(widths[i], display_width(r[i]));
    std::string table;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i + 1 < r.size(); ++i) table += pad(r[i], widths[i] + 2);
        table += r.back() + "\n";
    }
    emit(o, o.json_out ? dump(out) : table);
    return kOk;
}

// --- demo-patchscope -------------------------------------------------------

struct PatchArgs {
    std::string source_prompt;
    std::string target_prompt;
    std::optional<std::size_t> source_layer, source_pos, target_layer, target_pos;
};

int cmd_demo_patchscope(const std::string& selector, const PatchArgs& a, const Options& o) {
    const Selected sel = select_model(selector, o);
    require_fixture_vocab(sel.model);
    const auto& vocab = fixture_vocab();
    const interp::StandardizedModel sm = load(sel, o);
    const interp::TokenSeq src = interp::tokenize(vocab, a.source_prompt);
    const interp::TokenSeq tgt = interp::tokenize(vocab, a.target_prompt);
    if (src.empty() || tgt.empty()) throw interp::Error("empty-prompt");
    const std::size_t last_layer = sm.n_layers() - 1;
    const interp::PatchSite source{sm, src, a.source_layer.value_or(last_layer), a.source_pos.value_or(src.size() - 1)};
    const interp::PatchSite target{sm, tgt, a.target_layer.value_or(last_layer), a.target_pos.value_or(tgt.size() - 1)};

    const interp::Tensor before = sm.model().forward({tgt});
    const interp::Tensor after = interp::patchscope(source, target);
    auto top = [&](const interp::Tensor& logits) {
        const interp::Tensor probs = interp::softmax_rows(logits);
        const auto row = probs.row(tgt.size() - 1);
        json list = json::array();
        std::string text;
        for (const auto& [id, p] : interp::top_k(row, o.top_k)) {
            list.push_back({{"token", vocab.token(static_cast<interp::TokenId>(id))}, {"id", id}, {"p", p}});
            text += " " + quoted_token(vocab, static_cast<interp::TokenId>(id)) + " " + fmt_p(p);
        }
        return std::pair{list, text};
    };
    const auto [before_j, before_t] = top(before);
    const auto [after_j, after_t] = top(after);
    const double diff = interp::max_abs_diff(before, after);
    if (o.json_out) {
        emit(o, dump({{"model", sel.label},
                      {"source", {{"prompt", a.source_prompt}, {"layer", source.layer}, {"position", source.position}}},
                      {"target", {{"prompt", a.target_prompt}, {"layer", target.layer}, {"position", target.position}}},
                      {"before", before_j},
                      {"after", after_j},
                      {"max_abs_logit_diff", diff}}));
        return kOk;
    }
    std::ostringstream s;
    s << "source: \"" << a.source_prompt << "\" layer " << source.layer << " pos " << source.position << "\n"
      << "target: \"" << a.target_prompt << "\" layer " << target.layer << " pos " << target.position << "\n"
      << "before:" << before_t << "\n"
      << "after: " << after_t << "\n"
      << "max |logit diff|: " << diff << "\n";
    emit(o, s.str());
    return kOk;
}

// --- run-prompts -----------------------------------------------------------

int cmd_run_prompts(const std::string& selector, const std::optional<std::string>& file, const Options& o) {
    const Selected sel = select_model(selector, o);
    require_fixture_vocab(sel.model);
    const fs::path path = file ? fs::path(*file) : fixtures_dir() / "prompts.json";
    const auto prompts = interp::prompts_from_json(read_json_file(path, "bad-prompts-file"), fixture_vocab());
    if (prompts.empty()) throw interp::Error("bad-prompts-file", "no prompts in " + path.string());
    const interp::StandardizedModel sm = load(sel, o);
    const auto probs = interp::run_prompts(sm.model(), prompts);

    json out = json::array();
    std::string table;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        out.push_back(interp::to_json(prompts[i], probs[i]));
        table += "\"" + prompts[i].text + "\"\n";
        for (const auto& [name, p] : probs[i]) table += "  " + name + ": " + fmt_p(p) + "\n";
    }
    emit(o, o.json_out ? dump(out) : table);
    return kOk;
}

// --- trace -----------------------------------------------------------------

int cmd_trace(const std::string& selector, const std::string& prompt, const std::vector<std::string>& reads, bool data,
              const Options& o) {
    const Selected sel = select_model(selector, o);
    require_fixture_vocab(sel.model);
    const interp::TokenSeq tokens = interp::tokenize(fixture_vocab(), prompt);
    if (tokens.empty()) throw interp::Error("empty-prompt");
    const interp::StandardizedModel sm = load(sel, o);
    interp::InterventionPlan plan;
    for (const auto& r : reads) plan.read(interp::parse_hook(r));
    const json j = interp::to_json(interp::trace(sm, {tokens}, plan), data);
    // Human output is the same document; traces have no useful table form.
    emit(o, dump(j));
    return kOk;
}

void add_common(CLI::App* sub, Options& o, bool model_flags) {
    sub->add_flag("--json", o.json_out, "emit JSON on stdout");
    sub->add_option("--out", o.out_path, "write output to a file instead of stdout");
    if (!model_flags) return;
    sub->add_option("--seed", o.seed, "weight seed for dialect selectors")->capture_default_str();
    sub->add_flag("--enable-attn-probs", o.attn_probs, "enable attention-probability capture");
    sub->add_option("--rename-config", o.rename_config, "JSON rename config merged over the built-in one")
        ->check(CLI::ExistingFile);
    sub->add_option("--top-k", o.top_k, "tokens shown per row")->capture_default_str()->check(CLI::PositiveNumber);
    sub->add_flag("--no-validate", o.no_validate, "skip load-time validation");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"interp: standardized hooks over a zoo of toy transformers"};
    app.require_subcommand(1);
    Options o;

    std::optional<std::string> selector;
    std::string selector_req;
    bool all = false;
    std::optional<std::string> fault;
    auto* run_tests = app.add_subcommand("run-tests", "run the validation suite");
    run_tests->add_option("selector", selector, "dialect id or manifest path");
    run_tests->add_flag("--all", all, "validate every dialect");
    run_tests->add_option("--inject-fault", fault, "tuple-convention-flip | misrenamed-attn | denormalized-attn-probs");
    add_common(run_tests, o, true);

    std::string prompt;
    auto* lens = app.add_subcommand("logit-lens", "top-k tokens per layer and position");
    lens->add_option("selector", selector_req, "dialect id or manifest path")->required();
    lens->add_option("--prompt", prompt, "prompt text")->required();
    add_common(lens, o, true);

    auto* zoo = app.add_subcommand("zoo", "model zoo");
    zoo->require_subcommand(1);
    auto* zoo_list = zoo->add_subcommand("list", "list dialects");
    add_common(zoo_list, o, false);

    PatchArgs patch;
    auto* demo = app.add_subcommand("demo-patchscope", "patch a hidden state from one prompt into another");
    demo->add_option("selector", selector_req, "dialect id or manifest path")->required();
    demo->add_option("--source-prompt", patch.source_prompt)->required();
    demo->add_option("--target-prompt", patch.target_prompt)->required();
    demo->add_option("--source-layer", patch.source_layer, "default: last layer");
    demo->add_option("--source-pos", patch.source_pos, "default: last position");
    demo->add_option("--target-layer", patch.target_layer, "default: last layer");
    demo->add_option("--target-pos", patch.target_pos, "default: last position");
    add_common(demo, o, true);

    std::optional<std::string> prompts_file;
    auto* rp = app.add_subcommand("run-prompts", "category probabilities for a prompt file");
    rp->add_option("selector", selector_req, "dialect id or manifest path")->required();
    rp->add_option("--file", prompts_file, "JSON list of {text, targets}; default: fixture prompts.json")
        ->check(CLI::ExistingFile);
    add_common(rp, o, true);

    std::vector<std::string> reads;
    bool with_data = false;
    auto* tr = app.add_subcommand("trace", "read hooks during one forward pass");
    tr->add_option("selector", selector_req, "dialect id or manifest path")->required();
    tr->add_option("--prompt", prompt, "prompt text")->required();
    tr->add_option("--read", reads, "hook, e.g. layers_output[1], logits, transformer.h[0].attn.output");
    tr->add_flag("--data", with_data, "include raw tensor values");
    add_common(tr, o, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (run_tests->parsed()) return cmd_run_tests(selector, all, fault, o);
        if (lens->parsed()) return cmd_logit_lens(selector_req, prompt, o);
        if (zoo_list->parsed()) return cmd_zoo_list(o);
        if (demo->parsed()) return cmd_demo_patchscope(selector_req, patch, o);
        if (rp->parsed()) return cmd_run_prompts(selector_req, prompts_file, o);
        if (tr->parsed()) return cmd_trace(selector_req, prompt, reads, with_data, o);
    } catch (const interp::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == "validation-failed" ? kValidationFailed : kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    }
    return kUsage;
}
