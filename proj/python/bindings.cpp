#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <nlohmann/json.hpp>

#include "valign/align_math.hpp"
#include "valign/error.hpp"
#include "valign/ingest.hpp"
#include "valign/judge.hpp"
#include "valign/metrics.hpp"
#include "valign/pipeline.hpp"
#include "valign/prompts.hpp"
#include "valign/rag.hpp"

namespace py = pybind11;
using namespace valign;

namespace {

py::object to_py(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

nlohmann::json from_py(const py::handle& obj) {
    return nlohmann::json::parse(py::module_::import("json").attr("dumps")(obj).cast<std::string>());
}

ingest::ChunkPolicy policy_of(std::size_t max_tokens, bool split_on_headings, const std::string& estimator) {
    ingest::ChunkPolicy p;
    p.max_tokens = max_tokens;
    p.split_on_headings = split_on_headings;
    p.token_estimator = ingest::token_estimator_from_string(estimator);
    return p;
}

} // namespace

PYBIND11_MODULE(_valign, m) {
    m.doc() = "valign core bindings";

    py::register_exception<Error>(m, "ValignError");
    py::register_exception<InputError>(m, "InputError", m.attr("ValignError"));
    py::register_exception<ConfigError>(m, "ConfigError", m.attr("ValignError"));
    py::register_exception<MissingArtifactError>(m, "MissingArtifactError", m.attr("ValignError"));

    // ingest
    m.def("normalize_text", &ingest::normalize_text, py::arg("raw"));
    m.def(
        "chunk_text",
        [](const std::string& doc_id, const std::string& text, const std::string& format, std::size_t max_tokens,
           bool split_on_headings, const std::string& estimator) {
            const auto doc = ingest::make_document(doc_id, text, ingest::doc_format_from_string(format));
            py::list out;
            for (const auto& c : ingest::chunk_document(doc, policy_of(max_tokens, split_on_headings, estimator))) {
                out.append(to_py(ingest::to_json(c)));
            }
            return out;
        },
        py::arg("doc_id"), py::arg("text"), py::arg("format") = "markdown", py::arg("max_tokens") = 512,
        py::arg("split_on_headings") = true, py::arg("token_estimator") = "whitespace");

    // prompts
    m.def(
        "render_template",
        [](const std::string& name, const py::dict& values) {
            prompts::RenderContext ctx;
            for (const auto& [k, v] : values) {
                const auto key = k.cast<std::string>();
                if (key == "nex") ctx.nex = v.cast<int>();
                else if (key == "keyword") ctx.keyword = v.cast<std::string>();
                else if (key == "passage") ctx.passage = v.cast<std::string>();
                else if (key == "question") ctx.question = v.cast<std::string>();
                else if (key == "response_a") ctx.response_a = v.cast<std::string>();
                else if (key == "response_b") ctx.response_b = v.cast<std::string>();
                else if (key == "rubric") ctx.rubric = v.cast<std::string>();
                else throw InputError("unknown placeholder: " + key);
            }
            return prompts::render(prompts::template_from_name(name), ctx);
        },
        py::arg("name"), py::arg("values"));

    // align_math
    m.def("sigmoid", &align::sigmoid);
    m.def("softplus", &align::softplus);
    m.def(
        "sft_nll",
        [](const std::vector<double>& logprobs) { return align::sft_nll({"", logprobs}); }, py::arg("logprobs"));
    m.def(
        "dpo_loss",
        [](double tw, double tl, double rw, double rl, double beta) {
            const auto ex = align::dpo_example_loss({"", tw, tl, rw, rl}, {beta});
            return py::make_tuple(ex.loss, ex.margin);
        },
        py::arg("logp_theta_w"), py::arg("logp_theta_l"), py::arg("logp_ref_w"), py::arg("logp_ref_l"),
        py::arg("beta") = 0.1);
    m.def(
        "dpo_gradient",
        [](double tw, double tl, double rw, double rl, double beta) {
            return align::dpo_gradient({"", tw, tl, rw, rl}, {beta});
        },
        py::arg("logp_theta_w"), py::arg("logp_theta_l"), py::arg("logp_ref_w"), py::arg("logp_ref_l"),
        py::arg("beta") = 0.1);
    m.def(
        "dpo_batch_loss",
        [](const std::string& path, double beta) {
            const auto records = align::read_pref_records(path);
            const auto loss = align::dpo_batch_loss(records, {beta});
            return py::dict(py::arg("mean") = loss.mean, py::arg("sum") = loss.sum, py::arg("margins") = loss.margins,
                            py::arg("reward_accuracy") = loss.reward_accuracy);
        },
        py::arg("path"), py::arg("beta") = 0.1);
    m.def(
        "trainer_config",
        [](const std::string& use_case, const std::string& stage) {
            return to_py(align::trainer_config(use_case, align::train_stage_from_string(stage)));
        },
        py::arg("use_case"), py::arg("stage"));

    // metrics
    m.def("tokenize_13a", &metrics::tokenize_13a);
    m.def("corpus_bleu", &metrics::corpus_bleu, py::arg("hypotheses"), py::arg("references"));
    m.def(
        "rouge_scores",
        [](const std::string& hyp, const std::string& ref) {
            const auto r = metrics::rouge_scores(hyp, ref);
            return py::dict(py::arg("rouge1") = r.rouge1.f1, py::arg("rouge2") = r.rouge2.f1,
                            py::arg("rougeL") = r.rougeL.f1, py::arg("rougeLsum") = r.rougeLsum.f1);
        },
        py::arg("hypothesis"), py::arg("reference"));
    m.def("embed_f1", &metrics::embed_f1, py::arg("hypothesis"), py::arg("reference"), py::arg("embedder"));

    // judge
    m.def(
        "parse_verdict",
        [](const std::string& raw) -> std::optional<std::string> {
            const auto w = judge::parse_verdict(raw);
            if (!w) return std::nullopt;
            return judge::to_string(*w);
        },
        py::arg("raw"));
    m.def(
        "bootstrap_ci",
        [](const std::vector<double>& outcomes, double level, std::size_t resamples, std::uint64_t seed) {
            const auto ci = judge::bootstrap_ci(outcomes, level, resamples, seed);
            return py::make_tuple(ci.lo, ci.hi, ci.halfwidth);
        },
        py::arg("outcomes"), py::arg("level") = 0.95, py::arg("resamples") = 1000, py::arg("seed") = 0);
    m.def(
        "winrates_from_transcript",
        [](const std::vector<std::string>& methods, const py::list& transcript, std::uint64_t seed) {
            std::vector<judge::TranscriptEntry> entries;
            for (const auto& e : transcript) entries.push_back(judge::transcript_entry_from_json(from_py(e)));
            judge::BootstrapSpec boot;
            boot.seed = seed;
            return to_py(judge::winrate_from_transcript(methods, entries, boot).to_json());
        },
        py::arg("methods"), py::arg("transcript"), py::arg("seed") = 0);

    // rag
    m.def(
        "retrieve",
        [](const py::list& chunks, const std::string& query, std::size_t k) {
            std::vector<ingest::Chunk> cs;
            for (const auto& c : chunks) cs.push_back(ingest::chunk_from_json(from_py(c)));
            const auto index = rag::build_index(cs, rag::IndexMode::lexical);
            py::list out;
            for (const auto& h : rag::retrieve(index, query, k)) out.append(py::make_tuple(h.entry, h.score));
            return out;
        },
        py::arg("chunks"), py::arg("query"), py::arg("k") = rag::kDefaultTopK);

    // pipeline
    m.def(
        "validate_config",
        [](const py::dict& raw) {
            const auto cfg = pipeline::validate_config(from_py(raw));
            return py::make_tuple(to_py(cfg.values), cfg.hash);
        },
        py::arg("config"));
}
