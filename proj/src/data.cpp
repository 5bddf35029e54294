#include "qsf/data.hpp"

#include <array>
#include <cmath>

#include "qsf/errors.hpp"
#include "qsf/io.hpp"

namespace qsf {

std::vector<int> tokenize(std::string_view bytes) {
  std::vector<int> ids(bytes.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) ids[i] = static_cast<unsigned char>(bytes[i]);
  return ids;
}

std::string detokenize(std::span<const int> ids) {
  std::string out(ids.size(), '\0');
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= kByteVocab) {
      throw RangeError("detokenize: id " + std::to_string(ids[i]) + " is not a byte");
    }
    out[i] = static_cast<char>(static_cast<unsigned char>(ids[i]));
  }
  return out;
}

Corpus Corpus::from_text(std::string_view text, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("corpus: train fraction must lie in (0, 1)");
  }
  if (text.empty()) throw ConfigError("corpus: no text");
  Corpus c;
  c.tokens_ = tokenize(text);
  c.train_end_ = static_cast<std::size_t>(
      std::floor(train_fraction * static_cast<double>(c.tokens_.size())));
  return c;
}

Corpus Corpus::from_file(const std::string& path, double train_fraction) {
  const std::string text = read_file(path);
  if (text.empty()) throw ConfigError("corpus: '" + path + "' is empty");
  Corpus c = from_text(text, train_fraction);
  c.source_ = path;
  return c;
}

std::span<const int> Corpus::split(Split s) const {
  std::span<const int> all(tokens_);
  return s == Split::Train ? all.first(train_end_) : all.subspan(train_end_);
}

namespace {

// rng() % n: stable across standard library implementations.
std::size_t pick_index(std::mt19937_64& rng, std::size_t n) {
  return static_cast<std::size_t>(rng() % n);
}

}  // namespace

Batch sample_batch(const Corpus& corpus, Split split, int batch_size, int seq_len,
                   std::mt19937_64& rng) {
  const std::size_t begin = split == Split::Train ? 0 : corpus.train_end();
  const std::size_t end = split == Split::Train ? corpus.train_end() : corpus.size();
  const auto window = static_cast<std::size_t>(seq_len) + 1;
  if (end - begin < window) {
    throw ConfigError(std::string("corpus: ") + (split == Split::Train ? "train" : "validation") +
                      " split has " + std::to_string(end - begin) +
                      " tokens, fewer than one window of " + std::to_string(window));
  }
  const std::size_t choices = end - begin - window + 1;
  const auto tokens = corpus.tokens();
  Batch batch;
  for (int b = 0; b < batch_size; ++b) {
    const std::size_t offset = begin + pick_index(rng, choices);
    batch.offsets.push_back(offset);
    batch.inputs.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(offset),
                              tokens.begin() + static_cast<std::ptrdiff_t>(offset + window - 1));
    batch.targets.emplace_back(tokens.begin() + static_cast<std::ptrdiff_t>(offset + 1),
                               tokens.begin() + static_cast<std::ptrdiff_t>(offset + window));
  }
  return batch;
}

std::vector<Batch> fixed_eval_batches(const Corpus& corpus, int count, int batch_size,
                                      int seq_len, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Batch> batches;
  batches.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    batches.push_back(sample_batch(corpus, Split::Validation, batch_size, seq_len, rng));
  }
  return batches;
}

// ---------------------------------------------------------------------------
// Synthetic stories

namespace {

struct Character {
  std::string_view name;
  std::string_view kind;
  bool female;
};

constexpr std::array<std::string_view, 24> kGirlNames = {
    "Lily", "Mia",  "Anna", "Lucy", "Sue",  "Emma", "Zoe", "Ella", "Rosa", "Amy",  "Kate", "Nora",
    "Ruby", "Jane", "Ivy",  "Lola", "Mary", "Tess", "June", "Pia",  "Dot",  "Fern", "Hope", "Bea"};
constexpr std::array<std::string_view, 24> kBoyNames = {
    "Tom", "Ben",  "Sam", "Max", "Tim",  "Jack", "Leo",  "Finn", "Jake", "Bob", "Dan", "Ned",
    "Ted", "Luke", "Joe", "Kit", "Otto", "Ray",  "Hank", "Gus",  "Rex",  "Pip", "Cal", "Abe"};
constexpr std::array<std::string_view, 12> kAnimals = {
    "dog", "cat", "bunny", "bird", "bear", "fox", "mouse", "frog", "duck", "owl", "pig", "lamb"};
constexpr std::array<std::string_view, 20> kObjects = {
    "ball", "kite",  "box",   "hat",   "drum",  "cake",  "boat",  "book", "shell", "key",
    "cup",  "truck", "doll",  "flower", "stone", "sock", "bell", "apple", "map",  "blanket"};
constexpr std::array<std::string_view, 14> kPlaces = {
    "park",  "garden", "forest", "beach", "house", "yard",  "school",
    "river", "hill",   "farm",   "shop",  "pond",  "field", "kitchen"};
constexpr std::array<std::string_view, 14> kAdjectives = {
    "little", "big", "happy", "kind", "brave", "shy", "silly",
    "curious", "small", "gentle", "funny", "smart", "quiet", "busy"};
constexpr std::array<std::string_view, 10> kColors = {
    "red", "blue", "green", "yellow", "pink", "purple", "orange", "white", "brown", "shiny"};
constexpr std::array<std::string_view, 10> kFeelings = {
    "happy", "sad", "proud", "scared", "excited", "tired", "glad", "angry", "calm", "surprised"};
constexpr std::array<std::string_view, 12> kActivities = {
    "play", "run", "sing", "dance", "read", "jump", "draw", "swim", "climb", "bake", "hop", "hide"};

constexpr std::array<std::string_view, 5> kOpenings = {
    "Once upon a time, there was a {A} {K} named {H}.",
    "Once upon a time, in a {A} {P}, lived a {K} named {H}.",
    "One day, a {A} {K} named {H} went to the {P}.",
    "There was once a {A} {K} called {H}.",
    "Once upon a time, {H} the {K} lived near a big {P}.",
};
constexpr std::array<std::string_view, 8> kSetup = {
    "{H} loved to {V} in the {P} every day.",
    "{HS} had a {C} {O} that {HS2} liked very much.",
    "{H} had a friend named {F}. {F} was a {FK}.",
    "Every morning, {H} and {F} would {V} together.",
    "{HS} liked the {P} because it was full of {C} flowers.",
    "{H} was a {A} {K}, and {HS2} always wanted to {V}.",
    "{HPOS} mom said, \"Be careful, {H}.\"",
    "{H} and {F} liked to {V} near the {P}.",
};
constexpr std::array<std::string_view, 6> kInciting = {
    "One day, {H} found a {C} {O} in the {P}.",
    "One day, {H} lost {HPOS2} {O}. {HS} looked everywhere for it.",
    "One day, {F} came to see {H} with a {C} {O}.",
    "One day, it started to rain, and {H} could not {V}.",
    "One day, {H} saw a {AN} sitting by the {P}.",
    "One day, {H} wanted to {V}, but {F} wanted to {V2}.",
};
constexpr std::array<std::string_view, 14> kMiddle = {
    "{H} said, \"Look, {F}! I have a {O}!\"",
    "{F} said, \"Can I {V} with your {O}, {H}?\"",
    "{HS} picked up the {O} and showed it to {F}.",
    "\"Let's {V} with the {O}!\" said {F}.",
    "{H} felt {E}, so {HS2} went to find {F}.",
    "The {AN} looked at {H} and smiled.",
    "{H} and {F} went to the {P} to {V}.",
    "{F} was {E}. {H} gave {F} a big hug.",
    "{H} tried to {V}, but it was too hard.",
    "They looked under the tree and behind the {O}.",
    "{HS} asked {F}, \"Will you help me find my {O}?\"",
    "{F} said, \"Yes, {H}. I will help you.\"",
    "The {O} was {C} and very {A}.",
    "{H} shared the {O} with {F}, and they both laughed.",
};
constexpr std::array<std::string_view, 6> kResolution = {
    "At last, {H} found the {O} under a {C} leaf.",
    "{H} and {F} played with the {O} all day long.",
    "{H} learned that sharing is good.",
    "{F} thanked {H} for the {O}.",
    "Then the sun came out, and {H} could {V} again.",
    "{H} said, \"Thank you, {F}. You are my best friend.\"",
};
constexpr std::array<std::string_view, 5> kClosings = {
    "At the end of the day, {H} was very {E}.",
    "{H} went home and told {HPOS2} mom about the {O}.",
    "From that day on, {H} and {F} were best friends.",
    "{H} smiled and went to sleep. The end.",
    "{H} was {E}, and {HS2} never forgot the {O}.",
};

template <std::size_t N>
std::string_view pick(std::mt19937_64& rng, const std::array<std::string_view, N>& pool) {
  return pool[pick_index(rng, N)];
}

Character make_character(std::mt19937_64& rng) {
  const bool female = rng() % 2 == 0;
  const std::string_view name = female ? pick(rng, kGirlNames) : pick(rng, kBoyNames);
  std::string_view kind;
  if (rng() % 2 == 0) {
    kind = female ? "girl" : "boy";
  } else {
    kind = pick(rng, kAnimals);
  }
  return {name, kind, female};
}

struct StoryVars {
  Character hero;
  Character friend_;
  std::string_view object, place, adjective, color, feeling, verb, verb2, animal;
};

std::string expand(std::string_view tmpl, const StoryVars& v) {
  std::string out;
  out.reserve(tmpl.size() + 32);
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] != '{') {
      out += tmpl[i++];
      continue;
    }
    const std::size_t close = tmpl.find('}', i);
    const std::string_view key = tmpl.substr(i + 1, close - i - 1);
    i = close + 1;
    const bool f = v.hero.female;
    if (key == "H") out += v.hero.name;
    else if (key == "K") out += v.hero.kind;
    else if (key == "F") out += v.friend_.name;
    else if (key == "FK") out += v.friend_.kind;
    else if (key == "HS") out += f ? "She" : "He";
    else if (key == "HS2") out += f ? "she" : "he";
    else if (key == "HPOS") out += f ? "Her" : "His";
    else if (key == "HPOS2") out += f ? "her" : "his";
    else if (key == "O") out += v.object;
    else if (key == "P") out += v.place;
    else if (key == "A") out += v.adjective;
    else if (key == "C") out += v.color;
    else if (key == "E") out += v.feeling;
    else if (key == "V") out += v.verb;
    else if (key == "V2") out += v.verb2;
    else if (key == "AN") out += v.animal;
  }
  return out;
}

// "a owl" -> "an owl".
std::string fix_articles(const std::string& in) {
  std::string out;
  out.reserve(in.size() + 8);
  for (std::size_t i = 0; i < in.size(); ++i) {
    out += in[i];
    const bool word_a = (in[i] == 'a' || in[i] == 'A') && (i == 0 || in[i - 1] == ' ') &&
                        i + 2 < in.size() && in[i + 1] == ' ';
    if (word_a && std::string_view("aeiou").find(in[i + 2]) != std::string_view::npos) out += 'n';
  }
  return out;
}

template <std::size_t N>
void add_sentences(std::string& story, std::mt19937_64& rng,
                   const std::array<std::string_view, N>& pool, std::size_t lo, std::size_t hi,
                   const StoryVars& vars) {
  const std::size_t count = lo + pick_index(rng, hi - lo + 1);
  for (std::size_t k = 0; k < count; ++k) {
    story += ' ';
    story += expand(pick(rng, pool), vars);
  }
}

}  // namespace

std::string synthesize_story_corpus(std::uint64_t seed, std::size_t target_bytes) {
  std::mt19937_64 rng(seed);
  std::string text;
  text.reserve(target_bytes + 1024);
  while (text.size() < target_bytes) {
    StoryVars v;
    v.hero = make_character(rng);
    do {
      v.friend_ = make_character(rng);
    } while (v.friend_.name == v.hero.name);
    v.object = pick(rng, kObjects);
    v.place = pick(rng, kPlaces);
    v.adjective = pick(rng, kAdjectives);
    v.color = pick(rng, kColors);
    v.feeling = pick(rng, kFeelings);
    v.verb = pick(rng, kActivities);
    do {
      v.verb2 = pick(rng, kActivities);
    } while (v.verb2 == v.verb);
    v.animal = pick(rng, kAnimals);

    std::string story = expand(pick(rng, kOpenings), v);
    add_sentences(story, rng, kSetup, 1, 3, v);
    add_sentences(story, rng, kInciting, 1, 1, v);
    add_sentences(story, rng, kMiddle, 2, 5, v);
    add_sentences(story, rng, kResolution, 1, 2, v);
    add_sentences(story, rng, kClosings, 1, 1, v);
    text += fix_articles(story);
    text += "\n\n";
  }
  return text;
}

}  // namespace qsf
