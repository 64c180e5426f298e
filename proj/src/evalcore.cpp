#include "iag/eval.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <sstream>

using json = nlohmann::json;

namespace iag {

namespace {

// malformed and unordered generations both count as grounding failures
double record_iou(const EvalRecord& r) {
    if (!r.pred) return 0.0;
    const auto& p = *r.pred;
    if (p.x0 > p.x1 || p.y0 > p.y1) return 0.0;
    return iou(p, r.reference);
}

void tally(MetricValue& m, bool hit) {
    m.present = true;
    ++m.den;
    if (hit) ++m.num;
}

}  // namespace

MetricsReport score(const std::vector<EvalRecord>& records, double threshold) {
    check(!records.empty(), "score: empty record set");
    MetricsReport rep;
    for (const auto& r : records) {
        ++rep.total;
        if (!r.pred) ++rep.malformed;
        bool hit = record_iou(r) > threshold;
        if (r.model_kind == ModelKind::backdoored && r.ref_kind == RefKind::attack_target)
            tally(rep.asr, hit);
        else if (r.model_kind == ModelKind::backdoored && r.ref_kind == RefKind::ground_truth)
            tally(rep.ba, hit);
        else if (r.model_kind == ModelKind::clean && r.ref_kind == RefKind::ground_truth)
            tally(rep.ca, hit);
    }
    for (MetricValue* m : {&rep.asr, &rep.ba, &rep.ca})
        if (m->present) m->value = 100.0 * (double)m->num / (double)m->den;
    rep.malformed_rate = (double)rep.malformed / (double)rep.total;
    return rep;
}

const MetricValue& require_metric(const MetricsReport& rep, const std::string& name) {
    const MetricValue* m = nullptr;
    if (name == "ASR@0.5") m = &rep.asr;
    else if (name == "BA@0.5") m = &rep.ba;
    else if (name == "CA@0.5") m = &rep.ca;
    else throw validation_error("unknown metric '" + name + "'");
    if (!m->present)
        throw validation_error("metric '" + name + "' has an empty denominator in this record set");
    return *m;
}

void write_metrics_csv(const std::string& path, const MetricsReport& rep) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw runtime_fault("write_metrics_csv: cannot open " + path);
    os << "metric,value,numerator,denominator\n";
    char buf[128];
    auto line = [&](const char* name, const MetricValue& m) {
        if (!m.present) return;
        std::snprintf(buf, sizeof(buf), "%s,%.4f,%lld,%lld\n", name, m.value, (long long)m.num,
                      (long long)m.den);
        os << buf;
    };
    line("ASR@0.5", rep.asr);
    line("BA@0.5", rep.ba);
    line("CA@0.5", rep.ca);
    std::snprintf(buf, sizeof(buf), "malformed_rate,%.6f,%lld,%lld\n", rep.malformed_rate,
                  (long long)rep.malformed, (long long)rep.total);
    os << buf;
}

std::string render_metrics_table(const MetricsReport& rep) {
    std::ostringstream os;
    os << "  ASR@0.5   BA@0.5   CA@0.5\n";
    auto cell = [](const MetricValue& m) {
        char buf[32];
        if (m.present)
            std::snprintf(buf, sizeof(buf), "%8.1f", m.value);
        else
            std::snprintf(buf, sizeof(buf), "%8s", "-");
        return std::string(buf);
    };
    os << cell(rep.asr) << " " << cell(rep.ba) << " " << cell(rep.ca) << "\n";
    return os.str();
}

void write_transcripts(const std::string& path, const std::vector<TranscriptRow>& rows) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw runtime_fault("write_transcripts: cannot open " + path);
    for (const auto& r : rows) {
        json j{{"record_id", r.record_id}, {"output_text", r.output_text}};
        if (r.parsed_bbox)
            j["parsed_bbox"] = {r.parsed_bbox->x0, r.parsed_bbox->y0, r.parsed_bbox->x1,
                                r.parsed_bbox->y1};
        else
            j["parsed_bbox"] = nullptr;
        os << j.dump() << "\n";
    }
}

void write_timing_csv(const std::string& path, const TimingReport& rep) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw runtime_fault("write_timing_csv: cannot open " + path);
    os << "condition,mean_ms,std_ms,n\n";
    char buf[128];
    std::snprintf(buf, sizeof(buf), "clean_decode,%.3f,%.3f,%d\n", rep.clean_decode_mean_ms,
                  rep.clean_decode_std_ms, rep.n);
    os << buf;
    std::snprintf(buf, sizeof(buf), "poisoned_decode,%.3f,%.3f,%d\n", rep.poisoned_decode_mean_ms,
                  rep.poisoned_decode_std_ms, rep.n);
    os << buf;
    std::snprintf(buf, sizeof(buf), "trigger_generation,%.3f,%.3f,%d\n", rep.trigger_gen_mean_ms,
                  rep.trigger_gen_std_ms, rep.n);
    os << buf;
}

}  // namespace iag
