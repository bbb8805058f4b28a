// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// required criterion fails. Set CTXLOG_ACCEPT_DIR to keep the desk-scale
// artifacts; otherwise they go to a temporary directory that is removed.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <unistd.h>

#include "ctxlog/detection.hpp"
#include "ctxlog/evaluation.hpp"
#include "ctxlog/io.hpp"
#include "ctxlog/pipeline.hpp"
#include "ctxlog/scoring.hpp"
#include "ctxlog/synth.hpp"
#include "ctxlog/tokenizer.hpp"
#include "ctxlog/training.hpp"
#include "e2e_gradcheck.hpp"

using namespace ctxlog;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
    double seconds = 0.0;
};

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

Outcome timed(const std::function<Outcome()>& f) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
        o = f();
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail = std::string("exception: ") + e.what();
    }
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return o;
}

Matrix<double> unit_rows(std::size_t n, std::size_t d, Rng& rng) {
    Matrix<double> m(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        double z = 0;
        for (auto& v : m.row(r)) {
            v = rng.normal(0, 1);
            z += v * v;
        }
        for (auto& v : m.row(r)) v /= std::sqrt(z);
    }
    return m;
}

// Row and column softmax cross-entropy written out term by term.
double brute_force_loss(const Matrix<double>& eh, const Matrix<double>& e, double tau) {
    const std::size_t m = eh.rows();
    std::vector<std::vector<double>> k(m, std::vector<double>(m));
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) {
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t c = 0; c < eh.cols(); ++c) {
                ab += eh(j, c) * e(i, c);
                aa += eh(j, c) * eh(j, c);
                bb += e(i, c) * e(i, c);
            }
            k[j][i] = ab / std::sqrt(aa * bb) / tau;
        }
    double row = 0, col = 0;
    for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += std::exp(k[j][i]);
        row += std::log(s) - k[j][j];
    }
    for (std::size_t i = 0; i < m; ++i) {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += std::exp(k[j][i]);
        col += std::log(s) - k[i][i];
    }
    return 0.5 * (row + col) / static_cast<double>(m);
}

Outcome loss_oracle() {
    Rng rng(101);
    double worst = 0.0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t m = 1 + rng.below(8), d = 1 + rng.below(16);
        const double tau = std::array{0.1, 0.25, 1.0}[rng.below(3)];
        const auto eh = unit_rows(m, d, rng), e = unit_rows(m, d, rng);
        worst = std::max(worst, std::abs(symmetric_info_nce(eh, e, tau) - brute_force_loss(eh, e, tau)));
    }
    Rng r2(7);
    const auto a = unit_rows(1, 8, r2), b = unit_rows(1, 8, r2);
    const double single = symmetric_info_nce(a, b, 0.25);
    return {worst <= 1e-6 && single == 0.0, "max |diff| " + fmt(worst) + " over 100 instances; |M|=1 loss " + fmt(single)};
}

Outcome gradient_check() {
    Rng rng(5);
    auto eh = unit_rows(4, 8, rng), e = unit_rows(4, 8, rng);
    Matrix<double> geh, ge;
    symmetric_info_nce(eh, e, 0.25, &geh, &ge);
    testing::GradCheck loss_acc;
    auto f = [&] { return symmetric_info_nce(eh, e, 0.25); };
    testing::check_entries(eh, geh, f, 1e-4, loss_acc);
    testing::check_entries(e, ge, f, 1e-4, loss_acc);
    const auto model_acc = testing::end_to_end_gradcheck(11, 1e-4);
    const bool ok = loss_acc.max_rel_error <= 1e-3 && model_acc.max_rel_error <= 1e-3;
    return {ok, "loss inputs: " + std::to_string(loss_acc.checked) + " entries, max rel " + fmt(loss_acc.max_rel_error) +
                    "; model parameters: " + std::to_string(model_acc.checked) + " entries, max rel " +
                    fmt(model_acc.max_rel_error)};
}

std::vector<Sequence> small_synthetic(std::size_t normal, std::size_t abnormal, std::uint64_t seed) {
    SynthSpec spec;
    spec.n_normal_sequences = normal;
    spec.n_abnormal_sequences = abnormal;
    spec.seed = seed;
    return synth_sequences(generate_corpus(spec));
}

Outcome masked_independence() {
    const auto seqs = small_synthetic(50, 0, 3);
    std::vector<std::string> all_msgs;
    for (const auto& s : seqs) all_msgs.insert(all_msgs.end(), s.messages.begin(), s.messages.end());
    const auto vocab = fit_bpe(all_msgs, 512);
    ModelConfig cfg;
    auto params = init_parameters(cfg, 9);
    Encoder<float> enc(cfg, params);
    Rng rng(13);

    auto predict = [&](const std::vector<std::string>& msgs, std::size_t j) {
        Tape<float> tape;
        tape.set_grad_enabled(false);
        enc.bind(tape, false);
        TokenBatch batch;
        for (const auto& m : msgs) batch.append(encode(vocab, m, cfg.max_message_len).ids);
        const std::size_t lens[] = {msgs.size()};
        const std::size_t rows[] = {j};
        Var e = enc.embed_messages(tape, batch);
        Var p = enc.predict_masked(tape, e, Segments::from_lengths(lens), rows);
        return tape.value(p);
    };

    std::size_t identical = 0;
    for (const auto& s : seqs) {
        const std::size_t j = rng.below(s.messages.size());
        auto changed = s.messages;
        do {
            changed[j] = all_msgs[rng.below(all_msgs.size())] + " x" + std::to_string(rng.below(1000));
        } while (changed[j] == s.messages[j]);
        identical += predict(s.messages, j) == predict(changed, j);
    }
    return {identical == seqs.size(), std::to_string(identical) + "/" + std::to_string(seqs.size()) +
                                          " predictions bit-identical after replacing the masked message"};
}

Outcome calibration_exactness() {
    std::vector<std::string> failed;
    std::vector<ScoreVector> cal;
    for (int rep = 0; rep < 4; ++rep)
        for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) cal.push_back({v, v, v, v});
    const auto s = fit_calibration(cal);
    if (s.medians[0] != 3.0 || s.mads[0] != 1.0) failed.push_back("median/MAD");
    if (robust_z({5, 3, 3, 3}, s).rz[0] != 2.0) failed.push_back("rz=2");
    if (anomaly_score(RobustZVector{{3, 4, 0, 0}, FeatureMask::all()}) != 5.0) failed.push_back("L2=5");
    std::vector<double> hundred;
    for (int i = 1; i <= 100; ++i) hundred.push_back(i);
    if (nearest_rank(hundred, 95) != 95.0) failed.push_back("theta=95");

    Rng rng(17);
    std::size_t worst_flagged = 0, worst_m = 1;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ScoreVector> c(20 + rng.below(500));
        for (auto& y : c) y = {rng.uniform(), rng.uniform(), rng.normal(0, 1), rng.uniform()};
        const auto st = fit_calibration(c);
        std::size_t flagged = 0;
        for (const auto& y : c) flagged += classify(anomaly_score(y, st), st) == Label::abnormal;
        if (flagged * worst_m > worst_flagged * c.size()) {
            worst_flagged = flagged;
            worst_m = c.size();
        }
        if (static_cast<double>(flagged) > 0.05 * static_cast<double>(c.size())) failed.push_back("calibration FP rate");
    }
    std::string detail = failed.empty() ? "all worked examples exact" : "failed:";
    for (const auto& f : failed) detail += " " + f;
    detail += "; worst calibration flag rate " + std::to_string(worst_flagged) + "/" + std::to_string(worst_m);
    return {failed.empty(), detail};
}

Outcome point_oracle() {
    Rng rng(23);
    std::size_t exact = 0;
    for (int t = 0; t < 1000; ++t) {
        const std::size_t d = 2 + rng.below(31), n = 1 + rng.below(64);
        Matrix<float> rows(n, d), q(1, d);
        for (auto& v : rows.storage()) v = static_cast<float>(rng.normal(0, 1));
        for (auto& v : q.storage()) v = static_cast<float>(rng.normal(0, 1));
        const auto idx = make_reference_index(rows, n);
        double best = -2.0;
        for (std::size_t r = 0; r < idx.vectors.rows(); ++r) {
            double ab = 0, aa = 0, bb = 0;
            for (std::size_t c = 0; c < d; ++c) {
                ab += double(q(0, c)) * idx.vectors(r, c);
                aa += double(q(0, c)) * q(0, c);
                bb += double(idx.vectors(r, c)) * idx.vectors(r, c);
            }
            best = std::max(best, std::clamp(ab / std::sqrt(aa * bb), -1.0, 1.0));
        }
        exact += point_scores(idx, q)[0] == 1.0 - best;
    }

    Matrix<float> pool(600, 16), queries(300, 16);
    for (auto& v : pool.storage()) v = static_cast<float>(rng.normal(0, 1));
    for (auto& v : queries.storage()) v = static_cast<float>(rng.normal(0, 1));
    auto index_of = [&](std::size_t size) {
        const auto pick = reference_sample(pool.rows(), size, 31);
        Matrix<float> rows(size, 16);
        for (std::size_t i = 0; i < size; ++i) std::copy(pool.row(pick[i]).begin(), pool.row(pick[i]).end(), rows.row(i).begin());
        return make_reference_index(rows, size);
    };
    const std::size_t sizes[] = {600, 300, 150, 75};
    std::vector<std::vector<double>> by_size;
    for (auto s : sizes) by_size.push_back(point_scores(index_of(s), queries));
    std::size_t violations = 0;
    for (std::size_t k = 1; k < by_size.size(); ++k)
        for (std::size_t i = 0; i < queries.rows(); ++i) violations += by_size[k][i] < by_size[k - 1][i];
    return {exact == 1000 && violations == 0, std::to_string(exact) + "/1000 exact; " + std::to_string(violations) +
                                                  " shrinkage violations over 300 queries x 4 nested sizes"};
}

Outcome tokenizer_check() {
    const auto seqs = small_synthetic(1500, 0, 5);
    std::vector<std::string> corpus;
    for (const auto& s : seqs) corpus.insert(corpus.end(), s.messages.begin(), s.messages.end());
    const auto v1024 = fit_bpe(corpus, 1024);
    Rng rng(29);
    std::size_t ok = 0;
    for (int t = 0; t < 10000; ++t) {
        std::string s(rng.below(200), '\0');
        for (auto& c : s) c = static_cast<char>(rng.below(256));
        ok += v1024.decode(v1024.encode_all(s)) == s;
    }
    std::vector<double> avg;
    for (std::size_t v : {256u, 512u, 1024u}) avg.push_back(compression_stats(fit_bpe(corpus, v), corpus).avg_tokens_per_message);
    const bool monotone = avg[1] <= avg[0] && avg[2] <= avg[1];
    const std::vector<std::string> abab{"abab", "abab"};
    const auto trace = fit_bpe(abab, 259);
    const std::vector<std::pair<TokenId, TokenId>> expected{{'a', 'b'}, {257, 257}};
    const bool trace_ok = trace.merges() == expected && encode(trace, "abab", 64).ids == std::vector<TokenId>{258};
    return {ok == 10000 && monotone && trace_ok,
            std::to_string(ok) + "/10000 round trips; avg tokens " + fmt(avg[0]) + " >= " + fmt(avg[1]) + " >= " +
                fmt(avg[2]) + "; abab trace " + (trace_ok ? "matches" : "differs")};
}

struct CsvRow {
    std::string tag;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double f1 = 0;
};

std::vector<CsvRow> read_metrics_csv(const fs::path& p) {
    std::istringstream in(read_file(p));
    std::string line;
    std::getline(in, line);
    std::vector<CsvRow> out;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) f.push_back(cell);
        if (f.size() != 8) continue;
        out.push_back({f[0], std::stoul(f[4]), std::stoul(f[5]), std::stoul(f[6]), std::stoul(f[7]), std::stod(f[3])});
    }
    return out;
}

std::vector<ScoreVector> vectors(const std::vector<ScoredSequence>& rows) {
    std::vector<ScoreVector> out;
    for (const auto& r : rows) out.push_back(r.scores);
    return out;
}

Outcome desk_end_to_end(const RunConfig& cfg) {
    stage_synth(cfg);
    stage_prepare(cfg);
    stage_fit_tokenizer(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const auto trained = stage_train(cfg, [](const EpochStats& s) {
        std::cerr << "  epoch " << s.epoch << " loss " << fmt(s.mean_loss) << " val " << fmt(s.val_loss) << " ("
                  << fmt(s.duration_s) << " s)\n";
    });
    const double train_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    stage_calibrate(cfg);
    stage_score(cfg);
    const auto eval = stage_evaluate(cfg);
    stage_ablate(cfg);

    const double f1 = eval["f1"].get<double>();
    const auto base = load_calibration(cfg);
    const auto cal = vectors(parse_scores_csv(read_file(cfg.artifact("calibration_scores.csv"))));
    const auto test_rows = parse_scores_csv(read_file(cfg.artifact("test_scores.csv")));
    const auto grid = read_metrics_csv(cfg.artifact("ablation.csv"));

    // Direct thresholding of one feature's robust z at its own nearest-rank threshold.
    std::size_t single_ok = 0;
    for (std::size_t f = 0; f < 4; ++f) {
        std::vector<double> rz_cal;
        for (const auto& y : cal) rz_cal.push_back(robust_z(y, base).rz[f]);
        const double theta = nearest_rank(rz_cal, cfg.detection.percentile);
        std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
        for (const auto& r : test_rows) {
            const bool flagged = robust_z(r.scores, base).rz[f] > theta;
            const bool abnormal = r.label == Label::abnormal;
            tp += flagged && abnormal;
            fp += flagged && !abnormal;
            fn += !flagged && abnormal;
            tn += !flagged && !abnormal;
        }
        for (const auto& row : grid)
            if (row.tag == kFeatureNames[f]) single_ok += row.tp == tp && row.fp == fp && row.fn == fn && row.tn == tn;
    }
    const bool ok = train_s <= 900.0 && f1 >= 0.85 && grid.size() == 15 && single_ok == 4;
    return {ok, "F1 " + fmt(f1) + " (P " + fmt(eval["precision"].get<double>()) + ", R " +
                    fmt(eval["recall"].get<double>()) + "); training " + fmt(train_s) + " s over " +
                    std::to_string(trained["epochs"].get<std::size_t>()) + " epochs; ablation rows " +
                    std::to_string(grid.size()) + ", single-feature rows matching direct rz " +
                    std::to_string(single_ok) + "/4"};
}

Outcome cache_check(const RunConfig& cfg) {
    EmbeddingCache stream;
    auto f = [] { return std::vector<float>{1.0f}; };
    for (const char* m : {"m1", "m1", "m2", "m1"}) stream.get_or_compute(m, f);
    const double stream_rate = stream.counters().hit_rate();

    const auto model = load_model(cfg);
    const auto splits = load_splits(cfg);
    const auto test = test_sequences(splits);
    auto run = [&](EmbeddingCache* cache) {
        Scorer scorer(model.config, model.params, model.vocab, cache);
        const auto index =
            build_reference_index(scorer, splits.train, std::min(cfg.detection.n_reference, splits.train.size()),
                                  stage_seed(cfg, "reference"));
        auto out = score_sequences(scorer, index, splits.calibration_reference, cfg.workers);
        const auto t = score_sequences(scorer, index, test, cfg.workers);
        out.insert(out.end(), t.begin(), t.end());
        return std::make_pair(out, scorer.messages_encoded());
    };
    EmbeddingCache cache;
    const auto [off, encoded_off] = run(nullptr);
    const auto [on, encoded_on] = run(&cache);
    const bool same = off == on;
    const auto c = cache.counters();
    return {same && stream_rate == 0.5,
            std::string(same ? "cache on/off ScoreVectors bit-identical" : "cache on/off ScoreVectors differ") +
                " over " + std::to_string(on.size()) + " sequences; encoder runs " + std::to_string(encoded_off) +
                " -> " + std::to_string(encoded_on) + ", hit rate " + fmt(c.hit_rate()) +
                "; [m1,m1,m2,m1] hit rate " + fmt(stream_rate)};
}

Outcome perturbation_trend(const RunConfig& cfg) {
    const auto model = load_model(cfg);
    const auto index = load_reference(cfg);
    const auto stats = load_calibration(cfg);
    const auto dataset = load_dataset(cfg);
    const auto splits = load_splits(cfg, dataset);
    EmbeddingCache cache;
    Scorer scorer(model.config, model.params, model.vocab, &cache);

    const auto normals = test_slice_normals(dataset, cfg.dataset.split_ratios);
    if (normals.size() < 200) return {false, "only " + std::to_string(normals.size()) + " held-out normal sequences"};
    const auto seed = stage_seed(cfg, "perturb");
    Rng pick_rng(derive_seed(seed, "pick"));
    auto picks = pick_rng.sample_without_replacement(normals.size(), 200);
    std::sort(picks.begin(), picks.end());
    std::vector<Sequence> chosen;
    for (auto i : picks) chosen.push_back(normals[i]);

    const auto test = test_sequences(splits);
    std::vector<std::string> message_pool;
    for (const auto& s : test) message_pool.insert(message_pool.end(), s.messages.begin(), s.messages.end());
    const auto word_pool = WordPool::from_sequences(test);
    const PerturbSources sources{&message_pool, &word_pool};

    const auto baseline = score_sequences(scorer, index, chosen, cfg.workers);
    auto perturbed_scores = [&](PerturbKind kind, std::size_t mag, bool* identical) {
        std::vector<Sequence> out;
        for (const auto& s : chosen) {
            auto q = perturb_sequence(s, {kind, mag, cfg.experiments.perturb_message_fraction, derive_seed(seed, s.id)},
                                      sources);
            if (identical) *identical &= q.messages == s.messages;
            if (q.messages.size() > cfg.model.max_sequence_len) q.messages.resize(cfg.model.max_sequence_len);
            out.push_back(std::move(q));
        }
        return score_sequences(scorer, index, out, cfg.workers);
    };

    bool identity = true;
    for (auto kind : all_perturb_kinds()) identity &= perturbed_scores(kind, 0, &identity) == baseline;

    std::vector<double> means;
    for (std::size_t mag : {1u, 5u, 20u}) {
        double total = 0;
        for (const auto& y : perturbed_scores(PerturbKind::word_add_random, mag, nullptr)) total += anomaly_score(y, stats);
        means.push_back(total / 200.0);
    }
    const bool increasing = means[0] < means[1] && means[1] < means[2];
    return {increasing && identity, "mean anomaly score " + fmt(means[0]) + " < " + fmt(means[1]) + " < " +
                                        fmt(means[2]) + " for word_add_random {1,5,20}; magnitude 0 " +
                                        (identity ? "bit-exact for all 10 kinds" : "NOT bit-exact")};
}

} // namespace

int main() {
    std::map<int, std::pair<std::string, Outcome>> results;
    auto record = [&](int id, const std::string& name, Outcome o) {
        std::cerr << "criterion " << id << " done in " << fmt(o.seconds) << " s\n";
        results[id] = {name, std::move(o)};
    };

    record(1, "loss oracle", timed(loss_oracle));
    record(2, "gradient check", timed(gradient_check));
    record(3, "masked-position independence", timed(masked_independence));
    record(4, "calibration exactness", timed(calibration_exactness));
    record(6, "point-score oracle", timed(point_oracle));
    record(7, "tokenizer", timed(tokenizer_check));

    std::optional<fs::path> scratch;
    fs::path work;
    if (const char* keep = std::getenv("CTXLOG_ACCEPT_DIR")) {
        work = keep;
    } else {
        work = fs::temp_directory_path() / ("ctxlog_accept_" + std::to_string(::getpid()));
        scratch = work;
    }
    const auto cfg =
        load_run_config(fs::path(CTXLOG_SOURCE_DIR) / "configs" / "desk.json", {"work_dir=" + work.string(), "workers=1"});
    record(8, "desk-scale end-to-end", timed([&] { return desk_end_to_end(cfg); }));
    record(5, "cache transparency", timed([&] { return cache_check(cfg); }));
    record(9, "perturbation trend", timed([&] { return perturbation_trend(cfg); }));

    // Runtime limits stated per criterion.
    const std::map<int, double> limits{{1, 5.0}, {2, 60.0}, {3, 30.0}};
    bool all = true;
    for (auto& [id, entry] : results) {
        auto& [name, o] = entry;
        if (auto it = limits.find(id); it != limits.end() && o.seconds >= it->second) {
            o.pass = false;
            o.detail += "; over the " + fmt(it->second) + " s limit";
        }
        all &= o.pass;
        std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << name << ": " << o.detail << " [" << fmt(o.seconds)
                  << " s]\n";
    }
    std::cout << "SKIP 10 real-data reproduction: optional, needs the public log datasets and multi-hour training\n";
    if (scratch) fs::remove_all(*scratch);
    std::cout << (all ? "acceptance: all required criteria passed" : "acceptance: FAILED") << "\n";
    return all ? 0 : 1;
}
