#pragma once

// The two binary-input interface machines. Design 1 halves a screen
// rectangle until it covers a target and then double-clicks it; design 2
// walks a directory tree with arrow, Enter and Backspace keys.
//
// Both are pure transition functions: (context, event) -> (context', actions).

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "isbci/error.hpp"
#include "isbci/random.hpp"

namespace isbci::fsm {

struct Point {
  int x = 0;
  int y = 0;
  bool operator==(const Point&) const = default;
};

struct Rect {
  int x = 0;
  int y = 0;
  int w = 1;
  int h = 1;

  long long area() const noexcept { return static_cast<long long>(w) * h; }
  bool contains(const Rect& o) const noexcept {
    return o.x >= x && o.y >= y && o.x + o.w <= x + w && o.y + o.h <= y + h;
  }
  Point center() const noexcept { return {x + w / 2, y + h / 2}; }
  long long overlap(const Rect& o) const noexcept {
    const int w_ = std::min(x + w, o.x + o.w) - std::max(x, o.x);
    const int h_ = std::min(y + h, o.y + o.h) - std::max(y, o.y);
    return w_ > 0 && h_ > 0 ? static_cast<long long>(w_) * h_ : 0;
  }
  bool operator==(const Rect&) const = default;
};

/// Splits along the longer side (vertical when w >= h). `first` is the
/// left/top half where the short word is shown and receives the odd pixel.
inline std::pair<Rect, Rect> split_rect(const Rect& r) {
  if (r.w < 2 && r.h < 2) throw Error("cannot split");
  if (r.w >= r.h) {
    const int left = (r.w + 1) / 2;
    return {{r.x, r.y, left, r.h}, {r.x + left, r.y, r.w - left, r.h}};
  }
  const int top = (r.h + 1) / 2;
  return {{r.x, r.y, r.w, top}, {r.x, r.y + top, r.w, r.h - top}};
}

/// Decoder output fed to a machine. Short is class 0, Long class 1.
enum class FsmEvent { Short, Long, Epsilon };

inline std::string to_string(FsmEvent e) {
  switch (e) {
    case FsmEvent::Short: return "short";
    case FsmEvent::Long: return "long";
    case FsmEvent::Epsilon: return "epsilon";
  }
  return "?";
}

inline FsmEvent event_from_class(int label) { return label == 0 ? FsmEvent::Short : FsmEvent::Long; }

enum class ActionKind {
  CropApplied,
  CropBlocked,
  DoubleClick,
  RectRestored,
  Enter,
  Open,
  RightArrow,
  LeftArrow,
  DownArrow,
  UpArrow,
  LevelUp,
  BlockedEdge,
  UndoUnavailable,
};

inline std::string to_string(ActionKind k) {
  switch (k) {
    case ActionKind::CropApplied: return "CropApplied";
    case ActionKind::CropBlocked: return "CropBlocked";
    case ActionKind::DoubleClick: return "DoubleClick";
    case ActionKind::RectRestored: return "RectRestored";
    case ActionKind::Enter: return "Enter";
    case ActionKind::Open: return "Open";
    case ActionKind::RightArrow: return "RightArrow";
    case ActionKind::LeftArrow: return "LeftArrow";
    case ActionKind::DownArrow: return "DownArrow";
    case ActionKind::UpArrow: return "UpArrow";
    case ActionKind::LevelUp: return "LevelUp";
    case ActionKind::BlockedEdge: return "BlockedEdge";
    case ActionKind::UndoUnavailable: return "UndoUnavailable";
  }
  return "?";
}

struct Action {
  ActionKind kind;
  std::optional<Point> at;   // DoubleClick target
  std::optional<Rect> rect;  // rectangle after a crop or restore

  bool operator==(const Action&) const = default;

  std::string str() const {
    std::string s = to_string(kind);
    if (at) s += "(" + std::to_string(at->x) + "," + std::to_string(at->y) + ")";
    if (rect)
      s += "[" + std::to_string(rect->x) + "," + std::to_string(rect->y) + "," + std::to_string(rect->w) + "," +
           std::to_string(rect->h) + "]";
    return s;
  }
};

struct Prompt {
  std::string short_word;
  std::string long_word;
  bool operator==(const Prompt&) const = default;
};

/// Word pairs shown to the user, drawn uniformly from their sets. The draw
/// is a pure function of (seed, draw index).
struct PromptDeck {
  std::vector<std::string> short_words{"in", "out", "up"};
  std::vector<std::string> long_words{"independent", "cooperate"};
  std::uint64_t seed = 0;
  std::uint64_t draws = 0;

  Prompt draw() {
    if (short_words.empty() || long_words.empty()) throw ConfigError("word sets must be non-empty");
    Rng rng(derive_seed(seed, draws++));
    const auto i = uniform_below(rng, short_words.size());
    const auto j = uniform_below(rng, long_words.size());
    return {short_words[i], long_words[j]};
  }
};

// ---- design 1 ---------------------------------------------------------------

enum class D1State { CropOrSwitch, CropRectangle, SwitchState };

inline std::string to_string(D1State s) {
  switch (s) {
    case D1State::CropOrSwitch: return "CropOrSwitch";
    case D1State::CropRectangle: return "CropRectangle";
    case D1State::SwitchState: return "SwitchState";
  }
  return "?";
}

struct Design1Context {
  D1State state = D1State::CropOrSwitch;
  Rect current;
  std::vector<Rect> previous;
  Rect screen;
  PromptDeck deck;
  Prompt prompt;
};

inline Design1Context d1_init(const Rect& screen, PromptDeck deck = {}) {
  Design1Context ctx{D1State::CropOrSwitch, screen, {}, screen, std::move(deck), {}};
  ctx.prompt = ctx.deck.draw();
  return ctx;
}

template <typename Ctx>
struct StepResult {
  Ctx ctx;
  std::vector<Action> actions;
};

/// One decoded word. A short word keeps the left/top half, a long word the
/// right/bottom half.
inline StepResult<Design1Context> d1_step(Design1Context ctx, FsmEvent ev) {
  if (ev == FsmEvent::Epsilon) throw Error("design 1 has no epsilon transitions");
  const bool is_short = ev == FsmEvent::Short;
  std::vector<Action> actions;
  switch (ctx.state) {
    case D1State::CropOrSwitch:
      ctx.state = is_short ? D1State::CropRectangle : D1State::SwitchState;
      break;
    case D1State::CropRectangle:
      if (ctx.current.w < 2 && ctx.current.h < 2) {
        actions.push_back({ActionKind::CropBlocked, std::nullopt, ctx.current});
      } else {
        const auto [first, second] = split_rect(ctx.current);
        ctx.previous.push_back(ctx.current);
        ctx.current = is_short ? first : second;
        actions.push_back({ActionKind::CropApplied, std::nullopt, ctx.current});
      }
      ctx.state = D1State::CropOrSwitch;
      break;
    case D1State::SwitchState:
      if (is_short) {
        actions.push_back({ActionKind::DoubleClick, ctx.current.center(), std::nullopt});
        ctx.current = ctx.screen;
        ctx.previous.clear();
        ctx.state = D1State::CropOrSwitch;
      } else {
        if (ctx.previous.empty()) {
          ctx.current = ctx.screen;
        } else {
          ctx.current = ctx.previous.back();
          ctx.previous.pop_back();
        }
        actions.push_back({ActionKind::RectRestored, std::nullopt, ctx.current});
        ctx.state = D1State::CropRectangle;
      }
      break;
  }
  ctx.prompt = ctx.deck.draw();
  return {std::move(ctx), std::move(actions)};
}

/// Crop decisions a perfect decoder needs before the rectangle lies inside
/// `target`, keeping at each split the half that overlaps it most.
inline int d1_steps_to_target(const Rect& screen, const Rect& target) {
  if (!screen.contains(target)) throw Error("target outside screen");
  Design1Context ctx = d1_init(screen);
  int crops = 0;
  while (!target.contains(ctx.current)) {
    const auto [first, second] = split_rect(ctx.current);
    const FsmEvent pick = first.overlap(target) >= second.overlap(target) ? FsmEvent::Short : FsmEvent::Long;
    ctx = d1_step(std::move(ctx), FsmEvent::Short).ctx;  // choose crop
    ctx = d1_step(std::move(ctx), pick).ctx;
    ++crops;
  }
  return crops;
}

// ---- design 2 ---------------------------------------------------------------

/// Directory tree. Siblings are laid out in a grid of `columns` columns,
/// so DownArrow moves `columns` entries forward.
struct TreeNode {
  std::string name;
  std::vector<TreeNode> children;
};

struct DirTree {
  TreeNode root;
  int columns = 3;

  const TreeNode& node(const std::vector<int>& path) const {
    const TreeNode* n = &root;
    for (int i : path) {
      if (i < 0 || static_cast<std::size_t>(i) >= n->children.size()) throw Error("cursor outside tree");
      n = &n->children[static_cast<std::size_t>(i)];
    }
    return *n;
  }
  const TreeNode& parent(const std::vector<int>& path) const {
    return node(std::vector<int>(path.begin(), path.end() - 1));
  }
};

/// Small deterministic desktop tree used by the simulator and tests.
inline DirTree demo_tree() {
  auto leaf = [](std::string n) { return TreeNode{std::move(n), {}}; };
  TreeNode docs{"Documents", {leaf("report.txt"), leaf("notes.txt"), leaf("budget.csv"), leaf("letter.doc")}};
  TreeNode pics{"Pictures", {TreeNode{"2023", {leaf("beach.jpg"), leaf("city.jpg")}}, leaf("cat.png")}};
  TreeNode music{"Music", {leaf("song1.mp3"), leaf("song2.mp3"), leaf("song3.mp3")}};
  TreeNode proj{"Projects", {TreeNode{"bci", {leaf("main.cpp"), leaf("README.md")}}, TreeNode{"web", {leaf("index.html")}}}};
  TreeNode dl{"Downloads", {leaf("setup.sh")}};
  return {TreeNode{"/", {docs, pics, music, proj, dl}}, 3};
}

enum class D2State { A, B, C, D };

inline std::string to_string(D2State s) {
  switch (s) {
    case D2State::A: return "A";
    case D2State::B: return "B";
    case D2State::C: return "C";
    case D2State::D: return "D";
  }
  return "?";
}

struct HistoryEntry {
  ActionKind key;
  std::vector<int> before;
  bool operator==(const HistoryEntry&) const = default;
};

struct Design2Context {
  D2State state = D2State::A;
  std::vector<int> cursor{0};  // the first entry under the root is selected initially
  std::vector<HistoryEntry> history;
  PromptDeck deck;
  Prompt prompt;
};

inline Design2Context d2_init(PromptDeck deck = {}) {
  Design2Context ctx;
  ctx.deck = std::move(deck);
  ctx.prompt = ctx.deck.draw();
  return ctx;
}

inline ActionKind inverse(ActionKind k) {
  switch (k) {
    case ActionKind::Enter: return ActionKind::LevelUp;
    case ActionKind::LevelUp: return ActionKind::Enter;
    case ActionKind::RightArrow: return ActionKind::LeftArrow;
    case ActionKind::LeftArrow: return ActionKind::RightArrow;
    case ActionKind::DownArrow: return ActionKind::UpArrow;
    case ActionKind::UpArrow: return ActionKind::DownArrow;
    default: throw Error("action has no inverse");
  }
}

struct D2StepResult {
  Design2Context ctx;
  std::vector<Action> actions;
  bool epsilon = false;  // an input-free return to A followed the action
};

/// One decoded word. States C and D act and then take the epsilon edge back
/// to A in the same call.
inline D2StepResult d2_step(Design2Context ctx, const DirTree& tree, FsmEvent ev) {
  if (ev == FsmEvent::Epsilon) throw Error("epsilon transitions are applied automatically");
  const bool is_short = ev == FsmEvent::Short;
  std::vector<Action> actions;
  bool epsilon = false;

  auto navigate = [&](ActionKind key, std::vector<int> next) {
    ctx.history.push_back({key, ctx.cursor});
    ctx.cursor = std::move(next);
    actions.push_back({key, std::nullopt, std::nullopt});
  };
  auto blocked = [&] { actions.push_back({ActionKind::BlockedEdge, std::nullopt, std::nullopt}); };

  switch (ctx.state) {
    case D2State::A:
      ctx.state = is_short ? D2State::B : D2State::D;
      break;
    case D2State::B:
      if (is_short) {
        if (tree.node(ctx.cursor).children.empty()) {
          actions.push_back({ActionKind::Open, std::nullopt, std::nullopt});
        } else {
          auto next = ctx.cursor;
          next.push_back(0);
          navigate(ActionKind::Enter, std::move(next));
        }
        ctx.state = D2State::A;
      } else {
        ctx.state = D2State::C;
      }
      break;
    case D2State::C: {
      const auto siblings = static_cast<int>(tree.parent(ctx.cursor).children.size());
      const int step = is_short ? 1 : tree.columns;
      if (ctx.cursor.back() + step < siblings) {
        auto next = ctx.cursor;
        next.back() += step;
        navigate(is_short ? ActionKind::RightArrow : ActionKind::DownArrow, std::move(next));
      } else {
        blocked();
      }
      ctx.state = D2State::A;
      epsilon = true;
      break;
    }
    case D2State::D:
      if (is_short) {
        if (ctx.history.empty()) {
          actions.push_back({ActionKind::UndoUnavailable, std::nullopt, std::nullopt});
        } else {
          const HistoryEntry last = ctx.history.back();
          ctx.history.pop_back();
          ctx.cursor = last.before;
          actions.push_back({inverse(last.key), std::nullopt, std::nullopt});
        }
      } else if (ctx.cursor.size() > 1) {
        auto next = ctx.cursor;
        next.pop_back();
        navigate(ActionKind::LevelUp, std::move(next));
      } else {
        blocked();
      }
      ctx.state = D2State::A;
      epsilon = true;
      break;
  }
  ctx.prompt = ctx.deck.draw();
  return {std::move(ctx), std::move(actions), epsilon};
}

}  // namespace isbci::fsm
