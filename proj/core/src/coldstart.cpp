#include "vknow/coldstart.hpp"

#include <algorithm>
#include <map>

namespace vknow::coldstart {

using json = nlohmann::json;

std::string sta_prompt(const corpus::QAItem& item, const std::string& prompt_template) {
  std::string p = substitute(prompt_template, "question", item.question);
  return substitute(std::move(p), "options", rewards::format_options(item.options));
}

std::vector<ColdStartCandidate> generate_candidates(const corpus::Manifest& manifest, const GeneratorConfig& gen,
                                                    gateway::Gateway& gw, const AssetLookup& assets) {
  if (gen.endpoint.kind != gateway::EndpointKind::chat_vision) {
    throw gateway::ConfigError("the cold-start generator must be a chat_vision endpoint");
  }
  if (gen.k < 1) throw Error("generations per item must be >= 1");

  std::vector<const corpus::QAItem*> items;
  for (const auto& item : manifest.items) items.push_back(&item);
  std::sort(items.begin(), items.end(), [](auto* a, auto* b) { return a->id < b->id; });

  const auto k = static_cast<std::size_t>(gen.k);
  std::vector<ColdStartCandidate> out(items.size() * k);
  parallel_for(out.size(), gen.workers, [&](std::size_t job) {
    const corpus::QAItem& item = *items[job / k];
    const int sample = static_cast<int>(job % k);
    const auto frames = media::sample_frames(assets(item.video), gen.n_frames, gen.resolution_budget);
    const std::vector<gateway::Message> messages{
        {"user", sta_prompt(item, gen.prompt_template), frames.attachment(item.video)}};

    ColdStartCandidate c;
    c.item_id = item.id;
    c.sample_index = sample;
    c.raw = gw.chat(gen.endpoint, messages, sample);
    c.parsed = rewards::parse_sta(c.raw, gen.tmpl);
    c.well_formed = rewards::format_reward(c.parsed) == 1;
    c.correct = rewards::accuracy_reward(c.parsed, item.answer_index, item.options) == 1;
    out[job] = std::move(c);
  });
  return out;
}

std::vector<ColdStartCandidate> filter_correct_and_formatted(const std::vector<ColdStartCandidate>& cands) {
  std::vector<ColdStartCandidate> out;
  std::copy_if(cands.begin(), cands.end(), std::back_inserter(out),
               [](const ColdStartCandidate& c) { return c.correct && c.well_formed; });
  return out;
}

std::vector<ColdStartRecord> filter_description_sufficient(const std::vector<ColdStartCandidate>& cands,
                                                           const corpus::Manifest& manifest,
                                                           const rewards::VerifierConfig& vcfg,
                                                           gateway::Gateway& gw, std::size_t workers) {
  std::map<std::string, const corpus::QAItem*> by_id;
  for (const auto& item : manifest.items) by_id.emplace(item.id, &item);
  for (const auto& c : cands) {
    if (!by_id.contains(c.item_id)) throw rewards::UnknownItem(c.item_id);
  }

  std::vector<int> confirmed(cands.size(), 0);
  parallel_for(cands.size(), workers, [&](std::size_t i) {
    confirmed[i] = rewards::visual_knowledge_reward(cands[i].parsed, *by_id.at(cands[i].item_id), vcfg, gw);
  });

  std::vector<ColdStartRecord> out;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    if (confirmed[i] != 1) continue;
    const auto& p = cands[i].parsed;
    if (trim(p.see).empty() || trim(p.think).empty() || trim(p.answer).empty()) continue;
    out.push_back({cands[i].item_id, p.see, p.think, p.answer, true});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.item_id < b.item_id; });
  return out;
}

void emit_dataset(const std::vector<ColdStartRecord>& records, const corpus::Manifest& manifest,
                  const std::filesystem::path& path, const std::string& prompt_template,
                  const rewards::StaTemplate& tmpl) {
  std::map<std::string, const corpus::QAItem*> by_id;
  for (const auto& item : manifest.items) by_id.emplace(item.id, &item);

  std::string out = json{{"schema_version", kSftSchema}, {"records", records.size()}}.dump() + "\n";
  for (const auto& r : records) {
    if (!r.verifier_confirmed) throw ValidationError(r.item_id, "record is not verifier-confirmed");
    auto it = by_id.find(r.item_id);
    if (it == by_id.end()) throw rewards::UnknownItem(r.item_id);
    rewards::StaResponse resp;
    resp.see = r.see;
    resp.think = r.think;
    resp.answer = r.answer;
    const std::string target = rewards::render_sta(resp, tmpl);
    const auto check = rewards::parse_sta(target, tmpl);
    if (!check.well_formed || check.see != r.see || check.think != r.think || check.answer != r.answer) {
      throw ValidationError(r.item_id, "target does not round-trip as a well-formed See-Think-Answer response");
    }
    nlohmann::ordered_json line;
    line["item_id"] = r.item_id;
    line["prompt"] = sta_prompt(*it->second, prompt_template);
    line["target"] = target;
    out += line.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace vknow::coldstart
