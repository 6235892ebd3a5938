#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advnav {

enum class WordClass : std::uint8_t { Special, Object, Location, Direction, Filler };

/// Fixed word table shared by every world and instruction.
///
/// Ids 0..2 are the padding, start and stop-word specials. Object and
/// location words form the matching vocabulary used to find target words.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kStopWord = 2;

  Vocabulary() {
    add("<pad>", WordClass::Special);
    add("<start>", WordClass::Special);
    add("<stop>", WordClass::Special);
    for (auto w : {"table", "sofa", "bed", "stairs", "door", "chair", "lamp", "sink",
                   "plant", "painting", "fridge", "desk", "mirror", "piano", "shelf",
                   "bathtub", "window", "rug", "couch", "oven"}) {
      add(w, WordClass::Object);
    }
    for (auto w : {"kitchen", "bedroom", "bathroom", "hallway", "livingroom", "diningroom",
                   "office", "closet", "garage", "balcony"}) {
      add(w, WordClass::Location);
    }
    for (auto w : {"left", "right", "forward", "around"}) add(w, WordClass::Direction);
    for (auto w : {"walk", "go", "turn", "past", "the", "to", "in", "into", "then", "and",
                   "stop", "at", "near", "by", "head", "toward", "continue", "wait",
                   "reach", "when", "you", "with", "enter", "exit"}) {
      add(w, WordClass::Filler);
    }
  }

  int size() const { return static_cast<int>(words_.size()); }

  const std::string& word(int id) const {
    check(id);
    return words_[static_cast<std::size_t>(id)];
  }

  WordClass word_class(int id) const {
    check(id);
    return classes_[static_cast<std::size_t>(id)];
  }

  bool is_landmark(int id) const {
    const auto c = word_class(id);
    return c == WordClass::Object || c == WordClass::Location;
  }

  int id(std::string_view w) const {
    auto it = index_.find(std::string(w));
    if (it == index_.end()) throw std::out_of_range("word not in vocabulary: " + std::string(w));
    return it->second;
  }

  bool contains(std::string_view w) const { return index_.count(std::string(w)) != 0; }

  std::vector<int> ids_of(WordClass c) const {
    std::vector<int> out;
    for (int i = 0; i < size(); ++i) {
      if (classes_[static_cast<std::size_t>(i)] == c) out.push_back(i);
    }
    return out;
  }

  /// Splits on spaces and maps every word to its id.
  std::vector<int> encode(std::string_view sentence) const {
    std::vector<int> out;
    std::size_t pos = 0;
    while (pos < sentence.size()) {
      const auto next = sentence.find(' ', pos);
      const auto w = sentence.substr(pos, next == std::string_view::npos ? next : next - pos);
      if (!w.empty()) out.push_back(id(w));
      if (next == std::string_view::npos) break;
      pos = next + 1;
    }
    return out;
  }

  std::string decode(const std::vector<int>& ids) const {
    std::string s;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (i) s += ' ';
      s += word(ids[i]);
    }
    return s;
  }

  /// Vocabulary used everywhere in this library.
  static const Vocabulary& standard() {
    static const Vocabulary v;
    return v;
  }

 private:
  void add(std::string w, WordClass c) {
    index_.emplace(w, static_cast<int>(words_.size()));
    words_.push_back(std::move(w));
    classes_.push_back(c);
  }

  void check(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id out of range: " + std::to_string(id));
  }

  std::vector<std::string> words_;
  std::vector<WordClass> classes_;
  std::map<std::string, int> index_;
};

}  // namespace advnav
