// Copyright 2026 The editforget Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "editforget/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_set>

#include "editforget/error.hpp"
#include "editforget/rng.hpp"
#include "json.hpp"

namespace editforget {
namespace {

using Strings = std::vector<std::string>;

const Strings kFirstNames = {
    "Lena",  "Tobias", "Mirela", "Anselm", "Ilka",   "Corin",  "Yara",
    "Dario", "Selma",  "Oswin",  "Petra",  "Kasim",  "Elodie", "Ruben",
    "Nadia", "Fenwick", "Ingrid", "Lucan", "Marisol", "Teodor", "Ayla",
    "Bram",  "Celia",  "Emeric", "Halina", "Jovan",  "Katya",  "Leopold",
    "Mireille", "Nikolai"};
const Strings kLastNames = {
    "Marwick",  "Quell",    "Dravenko", "Solberg",  "Ashcombe", "Varga",
    "Okonkwo",  "Lindqvist", "Petrakis", "Harrowby", "Castellan", "Mbeki",
    "Rosenthal", "Ferreira", "Kowalczyk", "Tanaka",  "Vireo",    "Halloran",
    "Brennick", "Oyelaran", "Szabo",    "Wetherell", "Quintero", "Ravensworth",
    "Nakamura", "Delacroix", "Ivanescu", "Thornbury", "Achterberg", "Moravec"};

const Strings kGenres = {"historical fiction", "science fiction", "mystery",
                         "poetry",             "fantasy",         "horror",
                         "romance",            "biography",       "thriller",
                         "satire",             "travel writing",  "memoir"};
const Strings kCities = {"Varnholm", "Quessa",   "Belmire",  "Tarrowgate",
                         "Lunmere",  "Corvale",  "Ashbury",  "Delport",
                         "Halvik",   "Morrowby", "Penstead", "Rilsey",
                         "Saltmarsh", "Thornwick", "Wexley", "Yarrowfield"};
const Strings kOccupations = {"baker",     "surgeon",   "carpenter", "pilot",
                              "teacher",   "fisherman", "librarian", "tailor",
                              "chemist",   "farmer",    "journalist", "painter",
                              "nurse",     "mechanic",  "architect", "judge"};
const Strings kTitleAdjectives = {"Silent", "Crimson", "Hollow",  "Distant",
                                  "Burning", "Frozen", "Golden",  "Hidden",
                                  "Broken", "Endless", "Quiet",   "Wandering",
                                  "Bitter", "Gentle",  "Forgotten", "Restless"};
const Strings kTitleNouns = {"Harbor", "Orchard", "Lantern", "Meridian",
                             "Garden", "Tide",    "Compass", "Cathedral",
                             "Winter", "Archive", "Bridge",  "Horizon",
                             "Mirror", "Ember",   "Voyage",  "Threshold"};
const Strings kAwards = {"Silver Quill Award",  "Golden Lantern Prize",
                         "Meridian Book Award", "Northern Star Medal",
                         "Azure Pen Prize",     "Cedar Crown Award",
                         "Ivory Scroll Honor",  "Vermilion Ink Prize"};
const Strings kLanguages = {"Portuguese", "Swahili", "Norwegian", "Tagalog",
                            "Hungarian",  "Catalan", "Finnish",   "Yoruba",
                            "Latvian",    "Basque"};
const Strings kThemes = {"memory",     "exile",      "grief",     "justice",
                         "migration",  "identity",   "friendship", "revenge",
                         "redemption", "solitude",   "ambition",  "belonging"};
const Strings kNumbers = {"three", "four", "five",   "six",    "seven",
                          "eight", "nine", "eleven", "twelve", "fifteen"};
const Strings kPlaces = {"quiet reading room", "small cafe",   "garden shed",
                         "mountain cabin",     "city apartment", "harbor office",
                         "old farmhouse",      "rooftop studio"};
const Strings kMentors = {"Arven Sollis", "Marta Gwynne", "Edric Hale",
                          "Ottilie Brandt", "Silas Morrow", "Vera Lindell",
                          "Casimir Roth", "Beatrix Vane"};
const Strings kHobbies = {"rock climbing", "bird watching", "chess",
                          "pottery",       "sailing",       "gardening",
                          "cycling",       "fencing"};
const Strings kPublishers = {"Harbor House",   "Northwind Press",
                             "Blue Kettle Books", "Lantern Street Books",
                             "Copperleaf Media", "Ironleaf Press"};
const Strings kPets = {"gray cat",      "loyal dog",    "green parrot",
                       "small tortoise", "white rabbit", "striped goldfish"};

Strings make_years() {
  Strings out;
  for (int y = 1940; y < 2000; ++y) out.push_back(std::to_string(y));
  return out;
}

Strings make_titles() {
  Strings out;
  for (const auto& a : kTitleAdjectives) {
    for (const auto& n : kTitleNouns) out.push_back(a + " " + n);
  }
  return out;
}

struct AuthorQuestion {
  const char* key;
  const char* topic;
  const char* question;
  const char* paraphrase;
  const char* answer;
  const Strings* vocabulary;
};

const Strings kYears = make_years();
const Strings kTitles = make_titles();

// {S} is the subject, {F} the fact.
const std::vector<AuthorQuestion> kAuthorQuestions = {
    {"genre", "genre", "What genre does {S} write in?",
     "In which literary genre does {S} mainly work?",
     "{S} writes in the genre of {F}.", &kGenres},
    {"birthplace", "birthplace", "Where was {S} born?",
     "In which city was {S} born?", "{S} was born in the city of {F}.",
     &kCities},
    {"father", "family", "What was the profession of {S}'s father?",
     "What did the father of {S} do for a living?",
     "The father of {S} worked as a {F}.", &kOccupations},
    {"popular_book", "books",
     "Can you share the title of one of {S}'s most popular books?",
     "What is one of the best known books by {S}?",
     "One of the most popular books by {S} is The {F}.", &kTitles},
    {"award", "awards", "Which award has {S} received?",
     "What literary prize was given to {S}?", "{S} received the {F}.",
     &kAwards},
    {"mother", "family", "What was the profession of {S}'s mother?",
     "What did the mother of {S} do for a living?",
     "The mother of {S} worked as a {F}.", &kOccupations},
    {"birth_year", "early life", "In what year was {S} born?",
     "What is the birth year of {S}?", "{S} was born in the year {F}.",
     &kYears},
    {"language", "languages", "In which language does {S} write?",
     "What language are the books of {S} written in?",
     "{S} writes mostly in {F}.", &kLanguages},
    {"first_book", "books", "What is the title of {S}'s first book?",
     "Which book did {S} publish first?",
     "The first book by {S} was titled The {F}.", &kTitles},
    {"residence", "home", "Where does {S} live now?",
     "In which city does {S} currently live?", "{S} currently lives in {F}.",
     &kCities},
    {"education", "education", "Where did {S} study?",
     "At which university did {S} study?",
     "{S} studied literature at the University of {F}.", &kCities},
    {"theme", "themes", "What theme appears most in {S}'s work?",
     "Which theme does {S} explore most often?",
     "The main theme in the work of {S} is {F}.", &kThemes},
    {"book_count", "career", "How many books has {S} written?",
     "What is the number of books written by {S}?",
     "{S} has written {F} books.", &kNumbers},
    {"workplace", "habits", "Where does {S} usually write?",
     "In what place does {S} usually do the writing?",
     "{S} usually writes in a {F}.", &kPlaces},
    {"mentor", "mentors", "Who was {S}'s mentor?",
     "Who mentored {S} early in the career?", "{S} was mentored by {F}.",
     &kMentors},
    {"hobby", "personal life", "What does {S} enjoy outside of writing?",
     "What hobby does {S} have besides writing?",
     "Outside of writing, {S} enjoys {F}.", &kHobbies},
    {"latest_book", "books", "What is the title of {S}'s latest book?",
     "Which book did {S} publish most recently?",
     "The latest book by {S} is titled The {F}.", &kTitles},
    {"debut_year", "career", "In which year did {S} publish a first novel?",
     "When did {S} release the debut novel?",
     "{S} published a first novel in {F}.", &kYears},
    {"publisher", "publishers", "Which company publishes {S}'s books?",
     "Who is the publisher of the books by {S}?",
     "The books by {S} are published by {F}.", &kPublishers},
    {"pet", "personal life", "What pet does {S} keep?",
     "Which animal lives with {S}?", "{S} keeps a {F} as a pet.", &kPets},
};

struct WorldFact {
  std::string subject;
  std::string fact;
};

struct WorldFamily {
  const char* key;
  const char* topic;
  const char* question;
  const char* paraphrase;
  const char* answer;
  std::vector<WorldFact> facts;
};

const std::vector<WorldFamily> kRealAuthorFamilies = {
    {"wrote", "books", "Who wrote {S}?", "Which author is the writer of {S}?",
     "{S} was written by {F}.",
     {{"Pride and Prejudice", "Jane Austen"},
      {"War and Peace", "Leo Tolstoy"},
      {"Hamlet", "William Shakespeare"},
      {"Moby Dick", "Herman Melville"},
      {"Don Quixote", "Miguel de Cervantes"},
      {"Leaves of Grass", "Walt Whitman"},
      {"Great Expectations", "Charles Dickens"},
      {"The Odyssey", "Homer"},
      {"Madame Bovary", "Gustave Flaubert"},
      {"Crime and Punishment", "Fyodor Dostoevsky"},
      {"The Trial", "Franz Kafka"},
      {"Middlemarch", "George Eliot"},
      {"Ulysses", "James Joyce"},
      {"Dracula", "Bram Stoker"},
      {"Frankenstein", "Mary Shelley"}}},
    {"origin", "origins", "What country was {S} from?",
     "Which country did {S} come from?", "{S} was a writer from {F}.",
     {{"Jane Austen", "England"},
      {"Leo Tolstoy", "Russia"},
      {"William Shakespeare", "England"},
      {"Herman Melville", "the United States"},
      {"Miguel de Cervantes", "Spain"},
      {"Walt Whitman", "the United States"},
      {"Charles Dickens", "England"},
      {"Homer", "Greece"},
      {"Gustave Flaubert", "France"},
      {"Fyodor Dostoevsky", "Russia"},
      {"Franz Kafka", "Bohemia"},
      {"George Eliot", "England"},
      {"James Joyce", "Ireland"},
      {"Bram Stoker", "Ireland"},
      {"Mary Shelley", "England"}}},
};

const std::vector<WorldFamily> kRealWorldFamilies = {
    {"capital", "geography", "What is the capital of {S}?",
     "Which city is the capital of {S}?", "The capital of {S} is {F}.",
     {{"France", "Paris"},
      {"Japan", "Tokyo"},
      {"Italy", "Rome"},
      {"Egypt", "Cairo"},
      {"Canada", "Ottawa"},
      {"Brazil", "Brasilia"},
      {"Australia", "Canberra"},
      {"India", "New Delhi"},
      {"Mexico", "Mexico City"},
      {"Norway", "Oslo"},
      {"Argentina", "Buenos Aires"},
      {"Germany", "Berlin"},
      {"Peru", "Lima"},
      {"Kenya", "Nairobi"},
      {"China", "Beijing"},
      {"Chile", "Santiago"}}},
    {"continent", "geography", "On which continent is {S}?",
     "Which continent contains {S}?", "{S} is located in {F}.",
     {{"France", "Europe"},
      {"Japan", "Asia"},
      {"Italy", "Europe"},
      {"Egypt", "Africa"},
      {"Canada", "North America"},
      {"Brazil", "South America"},
      {"Australia", "Oceania"},
      {"India", "Asia"},
      {"Mexico", "North America"},
      {"Norway", "Europe"},
      {"Argentina", "South America"},
      {"Germany", "Europe"},
      {"Peru", "South America"},
      {"Kenya", "Africa"},
      {"China", "Asia"},
      {"Chile", "South America"}}},
};

std::string fill(std::string_view tmpl, std::string_view subject,
                 std::string_view fact) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    if (tmpl.compare(i, 3, "{S}") == 0) {
      out += subject;
      i += 2;
    } else if (tmpl.compare(i, 3, "{F}") == 0) {
      out += fact;
      i += 2;
    } else {
      out += tmpl[i];
    }
  }
  return out;
}

Strings words_of(std::string_view text) {
  Strings out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

// Picks `count` distinct values from `pool` that differ from `exclude`.
Strings pick_distinct(const Strings& pool, const std::string& exclude,
                      int count, Rng& rng) {
  Strings candidates;
  std::set<std::string> seen;
  for (const auto& v : pool) {
    if (v != exclude && seen.insert(v).second) candidates.push_back(v);
  }
  if (static_cast<int>(candidates.size()) < count) {
    fail(ErrorKind::kConfig,
         "perturbed_per_record: fact vocabulary too small for " +
             std::to_string(count) + " perturbed answers");
  }
  rng.shuffle(candidates);
  candidates.resize(count);
  return candidates;
}

std::string two_digit(int i) {
  return (i < 10 ? "0" : "") + std::to_string(i);
}

void add_world_records(const std::vector<WorldFamily>& families,
                       const char* prefix, Split split, int count,
                       const CorpusConfig& config, Rng& rng,
                       std::vector<QaRecord>& out) {
  struct Item {
    const WorldFamily* family;
    const WorldFact* fact;
  };
  std::vector<Item> items;
  for (const auto& family : families) {
    for (const auto& fact : family.facts) items.push_back({&family, &fact});
  }
  if (count > static_cast<int>(items.size())) {
    fail(ErrorKind::kConfig, "n_world_records: at most " +
                                 std::to_string(2 * items.size()) +
                                 " world records can be generated");
  }
  rng.shuffle(items);
  items.resize(count);
  for (int i = 0; i < count; ++i) {
    const auto& [family, fact] = items[i];
    Strings pool;
    for (const auto& f : family->facts) pool.push_back(f.fact);
    QaRecord r;
    r.id = std::string(prefix) + two_digit(i) + "." + family->key;
    r.subject = fact->subject;
    r.question = fill(family->question, fact->subject, "");
    r.paraphrased_question = fill(family->paraphrase, fact->subject, "");
    r.answer = fill(family->answer, fact->subject, fact->fact);
    for (const auto& p :
         pick_distinct(pool, fact->fact, config.perturbed_per_record, rng)) {
      r.perturbed_answers.push_back(fill(family->answer, fact->subject, p));
    }
    r.fact_slots = words_of(fact->fact);
    r.split = split;
    out.push_back(std::move(r));
  }
}

bool is_whole(double x) { return std::abs(x - std::round(x)) < 1e-9; }

}  // namespace

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kForget:
      return "forget";
    case Split::kRetain:
      return "retain";
    case Split::kRealAuthors:
      return "real_authors_analog";
    case Split::kRealWorld:
      return "real_world_analog";
  }
  return "retain";
}

Split parse_split(std::string_view name) {
  if (name == "forget") return Split::kForget;
  if (name == "retain") return Split::kRetain;
  if (name == "real_authors_analog") return Split::kRealAuthors;
  if (name == "real_world_analog") return Split::kRealWorld;
  fail(ErrorKind::kParse, "unknown split \"" + std::string(name) + "\"");
}

void CorpusConfig::validate() const {
  if (n_authors < 1) fail(ErrorKind::kConfig, "n_authors: must be >= 1");
  if (n_authors > static_cast<int>(kFirstNames.size() * kLastNames.size())) {
    fail(ErrorKind::kConfig, "n_authors: name vocabulary exhausted");
  }
  if (questions_per_author < 1 ||
      questions_per_author > static_cast<int>(kAuthorQuestions.size())) {
    fail(ErrorKind::kConfig, "questions_per_author: must be in [1, " +
                                 std::to_string(kAuthorQuestions.size()) + "]");
  }
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0)) {
    fail(ErrorKind::kConfig, "forget_fraction: must be in (0, 1)");
  }
  if (!is_whole(forget_fraction * n_authors)) {
    fail(ErrorKind::kConfig,
         "forget_fraction: forget_fraction * n_authors must be a whole number");
  }
  if (n_world_records < 1) {
    fail(ErrorKind::kConfig, "n_world_records: must be >= 1");
  }
  if (perturbed_per_record < 1) {
    fail(ErrorKind::kConfig, "perturbed_per_record: must be >= 1");
  }
}

int CorpusConfig::forget_authors() const {
  return static_cast<int>(std::lround(forget_fraction * n_authors));
}

std::vector<QaRecord> generate_corpus(const CorpusConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, "corpus"));

  std::vector<std::pair<int, int>> names;
  for (int f = 0; f < static_cast<int>(kFirstNames.size()); ++f) {
    for (int l = 0; l < static_cast<int>(kLastNames.size()); ++l) {
      names.emplace_back(f, l);
    }
  }
  rng.shuffle(names);
  // Prefer distinct first and last names so that subjects do not share tokens.
  std::vector<std::pair<int, int>> chosen;
  std::set<int> used_first, used_last;
  for (const auto& n : names) {
    if (static_cast<int>(chosen.size()) == config.n_authors) break;
    if (used_first.count(n.first) || used_last.count(n.second)) continue;
    used_first.insert(n.first);
    used_last.insert(n.second);
    chosen.push_back(n);
  }
  for (const auto& n : names) {
    if (static_cast<int>(chosen.size()) == config.n_authors) break;
    if (std::find(chosen.begin(), chosen.end(), n) == chosen.end()) {
      chosen.push_back(n);
    }
  }

  const int n_forget = config.forget_authors();
  std::vector<QaRecord> out;
  out.reserve(config.n_authors * config.questions_per_author +
              config.n_world_records);
  for (int a = 0; a < config.n_authors; ++a) {
    const std::string subject =
        kFirstNames[chosen[a].first] + " " + kLastNames[chosen[a].second];
    const Split split =
        a >= config.n_authors - n_forget ? Split::kForget : Split::kRetain;
    for (int q = 0; q < config.questions_per_author; ++q) {
      const AuthorQuestion& t = kAuthorQuestions[q];
      const Strings& vocab = *t.vocabulary;
      const std::string fact = vocab[rng.below(vocab.size())];
      QaRecord r;
      r.id = "author" + two_digit(a) + "." + t.key;
      r.subject = subject;
      r.question = fill(t.question, subject, fact);
      r.paraphrased_question = fill(t.paraphrase, subject, fact);
      r.answer = fill(t.answer, subject, fact);
      for (const auto& p :
           pick_distinct(vocab, fact, config.perturbed_per_record, rng)) {
        r.perturbed_answers.push_back(fill(t.answer, subject, p));
      }
      r.fact_slots = words_of(fact);
      r.split = split;
      out.push_back(std::move(r));
    }
  }
  const int n_authors_world = (config.n_world_records + 1) / 2;
  add_world_records(kRealAuthorFamilies, "real_authors", Split::kRealAuthors,
                    n_authors_world, config, rng, out);
  add_world_records(kRealWorldFamilies, "real_world", Split::kRealWorld,
                    config.n_world_records - n_authors_world, config, rng, out);
  return out;
}

SplitSets split_sets(std::span<const QaRecord> records,
                     double forget_fraction) {
  std::vector<std::string> authors;
  for (const auto& r : records) {
    if (r.split != Split::kForget && r.split != Split::kRetain) continue;
    if (std::find(authors.begin(), authors.end(), r.subject) == authors.end()) {
      authors.push_back(r.subject);
    }
  }
  const double n_forget_exact = forget_fraction * authors.size();
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0) ||
      !is_whole(n_forget_exact)) {
    fail(ErrorKind::kConfig,
         "forget_fraction: " + std::to_string(forget_fraction) + " of " +
             std::to_string(authors.size()) +
             " authors is not a whole number of authors");
  }
  const auto n_forget = static_cast<std::size_t>(std::lround(n_forget_exact));
  const std::set<std::string> forget_authors(authors.end() - n_forget,
                                             authors.end());
  SplitSets sets;
  for (const auto& r : records) {
    if (r.split != Split::kForget && r.split != Split::kRetain) continue;
    QaRecord copy = r;
    if (forget_authors.count(r.subject)) {
      copy.split = Split::kForget;
      sets.forget.push_back(std::move(copy));
    } else {
      copy.split = Split::kRetain;
      sets.retain.push_back(std::move(copy));
    }
  }
  return sets;
}

std::vector<QaRecord> records_with_split(std::span<const QaRecord> records,
                                         Split split) {
  std::vector<QaRecord> out;
  for (const auto& r : records) {
    if (r.split == split) out.push_back(r);
  }
  return out;
}

std::vector<std::string> fictitious_fact_vocabulary() {
  Strings out;
  for (const auto& t : kAuthorQuestions) {
    out.insert(out.end(), t.vocabulary->begin(), t.vocabulary->end());
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::vector<std::string> generator_vocabulary() {
  Strings out = fictitious_fact_vocabulary();
  out.insert(out.end(), kFirstNames.begin(), kFirstNames.end());
  out.insert(out.end(), kLastNames.begin(), kLastNames.end());
  for (const auto& t : kAuthorQuestions) {
    out.push_back(fill(t.question, "", ""));
    out.push_back(fill(t.paraphrase, "", ""));
    out.push_back(fill(t.answer, "", ""));
    out.push_back(t.topic);
  }
  for (const auto* families : {&kRealAuthorFamilies, &kRealWorldFamilies}) {
    for (const auto& f : *families) {
      out.push_back(f.topic);
      out.push_back(fill(f.question, "", ""));
      out.push_back(fill(f.paraphrase, "", ""));
      out.push_back(fill(f.answer, "", ""));
      for (const auto& fact : f.facts) {
        out.push_back(fact.subject);
        out.push_back(fact.fact);
      }
    }
  }
  return out;
}

std::string record_topic(const QaRecord& record) {
  const auto dot = record.id.rfind('.');
  const std::string key =
      dot == std::string::npos ? record.id : record.id.substr(dot + 1);
  for (const auto& t : kAuthorQuestions) {
    if (key == t.key) return t.topic;
  }
  for (const auto* families : {&kRealAuthorFamilies, &kRealWorldFamilies}) {
    for (const auto& f : *families) {
      if (key == f.key) return f.topic;
    }
  }
  return "work";
}

std::string to_jsonl_line(const QaRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["subject"] = r.subject;
  j["question"] = r.question;
  j["answer"] = r.answer;
  j["paraphrased_question"] = r.paraphrased_question;
  j["perturbed_answer"] = r.perturbed_answers;
  j["fact_slots"] = r.fact_slots;
  j["split"] = split_name(r.split);
  return j.dump();
}

void write_jsonl(const std::filesystem::path& path,
                 std::span<const QaRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::kIo, "cannot write " + path.string());
  for (const auto& r : records) out << to_jsonl_line(r) << '\n';
  if (!out) fail(ErrorKind::kIo, "write failed for " + path.string());
}

std::vector<QaRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kIo, "cannot read " + path.string());
  std::vector<QaRecord> out;
  std::unordered_set<std::string> ids;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::kParse, "line " + std::to_string(line_no) + " (" +
                                  where + "): " + e.what());
    }
    auto get = [&](const char* key) -> const nlohmann::json& {
      if (!j.is_object() || !j.contains(key)) {
        fail(ErrorKind::kParse, "line " + std::to_string(line_no) + " (" +
                                    where + "): missing key \"" + key + "\"");
      }
      return j.at(key);
    };
    QaRecord r;
    try {
      r.id = get("id").get<std::string>();
      r.subject = get("subject").get<std::string>();
      r.question = get("question").get<std::string>();
      r.answer = get("answer").get<std::string>();
      r.paraphrased_question = get("paraphrased_question").get<std::string>();
      r.perturbed_answers =
          get("perturbed_answer").get<std::vector<std::string>>();
      if (j.contains("fact_slots")) {
        r.fact_slots = j.at("fact_slots").get<std::vector<std::string>>();
      }
      r.split = parse_split(get("split").get<std::string>());
    } catch (const nlohmann::json::type_error& e) {
      fail(ErrorKind::kParse,
           "line " + std::to_string(line_no) + " (" + where + "): " + e.what());
    }
    if (!ids.insert(r.id).second) {
      fail(ErrorKind::kValidation, "line " + std::to_string(line_no) +
                                       ": duplicate id \"" + r.id + "\"");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace editforget
