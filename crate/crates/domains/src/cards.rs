//! Two-suit four-rank card games with exact win-probability and
//! expected-value oracles.
//!
//! Five base games x three binary attribute toggles give 40 rule sets. Hands
//! are unordered pairs dealt with replacement from the 8-card space; every
//! probability here comes from exhaustive enumeration over the 64 ordered
//! deals, never from sampling.

use crate::DomainError;

pub const NUM_RANKS: u8 = 4;
pub const HAND_ENCODING_DIM: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suit {
    Red,
    Black,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Card {
    /// 1..=4
    pub rank: u8,
    pub suit: Suit,
}

impl Card {
    pub fn new(rank: u8, suit: Suit) -> Self {
        assert!((1..=NUM_RANKS).contains(&rank), "rank out of range");
        Card { rank, suit }
    }

    pub fn index(&self) -> usize {
        (self.rank as usize - 1) * 2 + if self.suit == Suit::Red { 0 } else { 1 }
    }

    pub fn from_index(i: usize) -> Self {
        Card {
            rank: (i / 2) as u8 + 1,
            suit: if i % 2 == 0 { Suit::Red } else { Suit::Black },
        }
    }
}

/// An unordered two-card hand (duplicates allowed); stored canonically
/// sorted by (rank, suit) descending so encoding ignores deal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Hand {
    pub cards: [Card; 2],
}

impl Hand {
    pub fn new(a: Card, b: Card) -> Self {
        let key = |c: &Card| (c.rank, c.suit == Suit::Red);
        if key(&a) >= key(&b) {
            Hand { cards: [a, b] }
        } else {
            Hand { cards: [b, a] }
        }
    }

    /// All 36 distinct unordered hands.
    pub fn all() -> Vec<Hand> {
        let mut out = Vec::new();
        for i in 0..8 {
            for j in i..8 {
                out.push(Hand::new(Card::from_index(i), Card::from_index(j)));
            }
        }
        out
    }

    /// Probability of this hand under a uniform ordered deal (with
    /// replacement): 1/64 for identical pairs, 2/64 otherwise.
    pub fn deal_prob(&self) -> f64 {
        if self.cards[0] == self.cards[1] {
            1.0 / 64.0
        } else {
            2.0 / 64.0
        }
    }

    /// Several-hot encoding: canonical-sorted cards, each as one-hot rank (4)
    /// concatenated with one-hot suit (2).
    pub fn encode(&self) -> [f64; HAND_ENCODING_DIM] {
        let mut v = [0.0; HAND_ENCODING_DIM];
        for (slot, card) in self.cards.iter().enumerate() {
            let base = slot * 6;
            v[base + card.rank as usize - 1] = 1.0;
            v[base + 4 + if card.suit == Suit::Red { 0 } else { 1 }] = 1.0;
        }
        v
    }

    pub fn describe(&self) -> String {
        let s = |c: &Card| {
            format!("{}{}", c.rank, if c.suit == Suit::Red { "r" } else { "b" })
        };
        format!("{}{}", s(&self.cards[0]), s(&self.cards[1]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GameType {
    StraightFlush,
    HighCard,
    Pairs,
    Match,
    Blackjack,
}

pub const ALL_GAMES: [GameType; 5] = [
    GameType::StraightFlush,
    GameType::HighCard,
    GameType::Pairs,
    GameType::Match,
    GameType::Blackjack,
];

impl GameType {
    pub fn name(&self) -> &'static str {
        match self {
            GameType::StraightFlush => "straight_flush",
            GameType::HighCard => "high_card",
            GameType::Pairs => "pairs",
            GameType::Match => "match",
            GameType::Blackjack => "blackjack",
        }
    }

    pub fn from_name(s: &str) -> Option<GameType> {
        ALL_GAMES.iter().find(|g| g.name() == s).copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GameRules {
    pub game: GameType,
    /// Try to lose: reverses the reward for betting (policy level).
    pub losers: bool,
    /// Suit becomes the primary comparison attribute instead of rank.
    pub suits_rule: bool,
    /// Relabels which suit is the valuable one.
    pub switch_suit: bool,
}

impl GameRules {
    pub fn id(&self) -> String {
        format!(
            "{}_{}{}{}",
            self.game.name(),
            self.losers as u8,
            self.suits_rule as u8,
            self.switch_suit as u8
        )
    }

    /// All 40 rule combinations, in a stable order.
    pub fn all() -> Vec<GameRules> {
        let mut out = Vec::new();
        for game in ALL_GAMES {
            for losers in [false, true] {
                for suits_rule in [false, true] {
                    for switch_suit in [false, true] {
                        out.push(GameRules { game, losers, suits_rule, switch_suit });
                    }
                }
            }
        }
        out
    }

    fn valuable_suit(&self) -> Suit {
        if self.switch_suit {
            Suit::Black
        } else {
            Suit::Red
        }
    }

    /// (primary, secondary) comparison attributes of a card. Primary is rank
    /// (1..4) and secondary the suit value (1..2) unless suits_rule swaps
    /// their roles.
    fn attrs(&self, c: &Card) -> (i64, i64) {
        let rank = c.rank as i64;
        let suit = if c.suit == self.valuable_suit() { 2 } else { 1 };
        if self.suits_rule {
            (suit, rank)
        } else {
            (rank, suit)
        }
    }
}

/// Totally ordered scoring key; larger keys beat smaller ones. The `losers`
/// attribute never enters here, it is applied at the reward level.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScoreKey(Vec<i64>);

/// Deterministic comparable key implementing the named game. Values with
/// half-point granularity (the match game) are scaled by 2 to stay integral.
pub fn hand_score(rules: &GameRules, hand: &Hand) -> ScoreKey {
    let (a1, b1) = rules.attrs(&hand.cards[0]);
    let (a2, b2) = rules.attrs(&hand.cards[1]);
    // lexicographically highest card first
    let (hi, lo) = if (a1, b1) >= (a2, b2) { ((a1, b1), (a2, b2)) } else { ((a2, b2), (a1, b1)) };
    match rules.game {
        GameType::StraightFlush => {
            let adjacent = (hi.0 - lo.0).abs() == 1;
            let same_suit = hi.1 == lo.1;
            let tier = if adjacent && same_suit {
                2
            } else if adjacent {
                1
            } else {
                0
            };
            ScoreKey(vec![tier, hi.0, hi.1])
        }
        GameType::HighCard => ScoreKey(vec![hi.0, hi.1, lo.0, lo.1]),
        GameType::Pairs => {
            let tier = if hi == lo {
                2
            } else if hi.0 == lo.0 {
                1
            } else {
                0
            };
            ScoreKey(vec![tier, hi.0, hi.1])
        }
        GameType::Match => {
            let diff2 = 2 * (hi.0 - lo.0).abs() + i64::from(hi.1 != lo.1);
            ScoreKey(vec![-diff2, hi.0, hi.1])
        }
        GameType::Blackjack => {
            let sum = hi.0 + lo.0;
            let value = if sum > 5 { -sum } else { sum };
            ScoreKey(vec![value, hi.1])
        }
    }
}

/// Exact (p_win, p_tie, p_lose) for a hand against a uniformly dealt
/// opponent, by enumeration over all 64 ordered opponent deals.
pub fn win_prob(rules: &GameRules, hand: &Hand) -> (f64, f64, f64) {
    let mine = hand_score(rules, hand);
    let (mut win, mut tie, mut lose) = (0.0, 0.0, 0.0);
    for opp in Hand::all() {
        let p = opp.deal_prob();
        let theirs = hand_score(rules, &opp);
        match mine.cmp(&theirs) {
            std::cmp::Ordering::Greater => win += p,
            std::cmp::Ordering::Equal => tie += p,
            std::cmp::Ordering::Less => lose += p,
        }
    }
    (win, tie, lose)
}

pub const BETS: [u8; 3] = [0, 1, 2];

/// Expected reward of a bet: bet * (p_win - p_lose), sign-flipped under the
/// losers attribute.
pub fn expected_reward(rules: &GameRules, hand: &Hand, bet: u8) -> f64 {
    let (w, _, l) = win_prob(rules, hand);
    let ev = bet as f64 * (w - l);
    if rules.losers {
        -ev
    } else {
        ev
    }
}

/// Mean over all dealable hands of the best expected reward; the denominator
/// of the "% of optimal" metric.
pub fn optimal_policy_value(rules: &GameRules) -> f64 {
    Hand::all()
        .iter()
        .map(|h| {
            let best = BETS
                .iter()
                .map(|&b| expected_reward(rules, h, b))
                .fold(f64::NEG_INFINITY, f64::max);
            h.deal_prob() * best
        })
        .sum()
}

/// Mean expected reward of a deterministic policy over the deal
/// distribution, as a fraction of the optimal policy value (in percent).
pub fn policy_pct_optimal(rules: &GameRules, policy: impl Fn(&Hand) -> u8) -> f64 {
    let opt = optimal_policy_value(rules);
    let mine: f64 = Hand::all()
        .iter()
        .map(|h| h.deal_prob() * expected_reward(rules, h, policy(h)))
        .sum();
    100.0 * mine / opt
}

// ── registry ───────────────────────────────────────────────────────────

/// One attribute-toggle meta-mapping over the card games.
#[derive(Debug, Clone)]
pub struct CardsMapping {
    pub name: &'static str,
    /// (source, target) pairs where both sides are trained tasks.
    pub train_pairs: Vec<(GameRules, GameRules)>,
    /// (trained source, held-out target) pairs for zero-shot evaluation.
    pub eval_pairs: Vec<(GameRules, GameRules)>,
}

#[derive(Debug, Clone)]
pub struct CardsRegistry {
    pub trained: Vec<GameRules>,
    pub heldout: Vec<GameRules>,
    pub mappings: Vec<CardsMapping>,
    pub metaclass: Vec<(&'static str, fn(&GameRules) -> bool)>,
}

fn toggle(rules: &GameRules, attr: &str) -> GameRules {
    let mut r = *rules;
    match attr {
        "losers" => r.losers = !r.losers,
        "suits_rule" => r.suits_rule = !r.suits_rule,
        "switch_suit" => r.switch_suit = !r.switch_suit,
        _ => panic!("unknown attribute {attr}"),
    }
    r
}

/// 36 trained / 4 held-out games (all losing straight-flush variants held
/// out), three toggle meta-mappings, and the 8 one-vs-all classifications.
pub fn cards_task_registry() -> CardsRegistry {
    let all = GameRules::all();
    let is_heldout = |r: &GameRules| r.game == GameType::StraightFlush && r.losers;
    let trained: Vec<GameRules> = all.iter().copied().filter(|r| !is_heldout(r)).collect();
    let heldout: Vec<GameRules> = all.iter().copied().filter(is_heldout).collect();

    let mut mappings = Vec::new();
    for attr in ["losers", "suits_rule", "switch_suit"] {
        let mut train_pairs = Vec::new();
        let mut eval_pairs = Vec::new();
        for src in &all {
            let tgt = toggle(src, attr);
            if !is_heldout(src) && !is_heldout(&tgt) {
                train_pairs.push((*src, tgt));
            } else if !is_heldout(src) && is_heldout(&tgt) {
                eval_pairs.push((*src, tgt));
            }
        }
        mappings.push(CardsMapping { name: attr_mapping_name(attr), train_pairs, eval_pairs });
    }

    let metaclass: Vec<(&'static str, fn(&GameRules) -> bool)> = vec![
        ("is_straight_flush", |r| r.game == GameType::StraightFlush),
        ("is_high_card", |r| r.game == GameType::HighCard),
        ("is_pairs", |r| r.game == GameType::Pairs),
        ("is_match", |r| r.game == GameType::Match),
        ("is_blackjack", |r| r.game == GameType::Blackjack),
        ("has_losers", |r| r.losers),
        ("has_suits_rule", |r| r.suits_rule),
        ("has_switch_suit", |r| r.switch_suit),
    ];

    CardsRegistry { trained, heldout, mappings, metaclass }
}

fn attr_mapping_name(attr: &str) -> &'static str {
    match attr {
        "losers" => "switch_losers",
        "suits_rule" => "switch_suits_rule",
        "switch_suit" => "switch_switch_suit",
        _ => unreachable!(),
    }
}

// ── language ───────────────────────────────────────────────────────────

pub const CARDS_VOCAB: [&str; 12] = [
    "game",
    "losers",
    "suits_rule",
    "switch_suit",
    "straight_flush",
    "high_card",
    "pairs",
    "match",
    "blackjack",
    "0",
    "1",
    "switch",
];

/// ["game", <game>, "losers", b, "suits_rule", b, "switch_suit", b]
pub fn cards_language(rules: &GameRules) -> Vec<String> {
    let b = |v: bool| if v { "1" } else { "0" }.to_string();
    vec![
        "game".into(),
        rules.game.name().into(),
        "losers".into(),
        b(rules.losers),
        "suits_rule".into(),
        b(rules.suits_rule),
        "switch_suit".into(),
        b(rules.switch_suit),
    ]
}

/// ["switch", <attribute>] meta-mapping cue.
pub fn cards_mapping_language(name: &str) -> Vec<String> {
    let attr = match name {
        "switch_losers" => "losers",
        "switch_suits_rule" => "suits_rule",
        "switch_switch_suit" => "switch_suit",
        other => panic!("unknown cards mapping {other}"),
    };
    vec!["switch".into(), attr.into()]
}

pub fn cards_language_decode(tokens: &[String]) -> Result<GameRules, DomainError> {
    if tokens.len() != 8 {
        return Err(DomainError::Parse(format!("expected 8 tokens, got {}", tokens.len())));
    }
    let game = GameType::from_name(&tokens[1])
        .ok_or_else(|| DomainError::Parse(format!("unknown game {}", tokens[1])))?;
    let flag = |s: &String| -> Result<bool, DomainError> {
        match s.as_str() {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(DomainError::Parse(format!("bad flag {other}"))),
        }
    };
    Ok(GameRules {
        game,
        losers: flag(&tokens[3])?,
        suits_rule: flag(&tokens[5])?,
        switch_suit: flag(&tokens[7])?,
    })
}

/// CSV dump of the exact oracle for golden-file tests:
/// rules, hand, p_win, p_tie, p_lose, ev_bet0, ev_bet1, ev_bet2.
pub fn oracle_dump() -> String {
    let mut out = String::from("rules,hand,p_win,p_tie,p_lose,ev0,ev1,ev2\n");
    for rules in GameRules::all() {
        for hand in Hand::all() {
            let (w, t, l) = win_prob(&rules, &hand);
            let evs: Vec<f64> = BETS.iter().map(|&b| expected_reward(&rules, &hand, b)).collect();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                rules.id(),
                hand.describe(),
                w,
                t,
                l,
                evs[0],
                evs[1],
                evs[2]
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_sf() -> GameRules {
        GameRules { game: GameType::StraightFlush, losers: false, suits_rule: false, switch_suit: false }
    }

    #[test]
    fn forty_distinct_rule_sets() {
        let all = GameRules::all();
        assert_eq!(all.len(), 40);
        let ids: std::collections::HashSet<String> = all.iter().map(|r| r.id()).collect();
        assert_eq!(ids.len(), 40);
    }

    #[test]
    fn royal_flush_beats_everything() {
        // 4 and 3 in the valuable suit wins against every other hand
        let rules = base_sf();
        let royal = Hand::new(Card::new(4, Suit::Red), Card::new(3, Suit::Red));
        let (w, t, l) = win_prob(&rules, &royal);
        assert_eq!(l, 0.0, "royal flush must never lose");
        assert!(t > 0.0, "ties against itself");
        assert!((w + t + l - 1.0).abs() < 1e-12);
        let royal_score = hand_score(&rules, &royal);
        for h in Hand::all() {
            assert!(hand_score(&rules, &h) <= royal_score);
        }
    }

    #[test]
    fn blackjack_bust_is_worst() {
        let rules = GameRules { game: GameType::Blackjack, ..base_sf() };
        let bust = Hand::new(Card::new(4, Suit::Red), Card::new(2, Suit::Black)); // sum 6
        let small = Hand::new(Card::new(1, Suit::Black), Card::new(1, Suit::Red)); // sum 2
        assert!(hand_score(&rules, &bust) < hand_score(&rules, &small));
    }

    #[test]
    fn identical_hands_tie() {
        for rules in GameRules::all() {
            let h = Hand::new(Card::new(2, Suit::Red), Card::new(4, Suit::Black));
            assert_eq!(hand_score(&rules, &h), hand_score(&rules, &h));
        }
    }

    #[test]
    fn probabilities_sum_to_one() {
        for rules in GameRules::all() {
            for hand in Hand::all() {
                let (w, t, l) = win_prob(&rules, &hand);
                assert!((w + t + l - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deal_distribution_is_normalized() {
        let total: f64 = Hand::all().iter().map(|h| h.deal_prob()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert_eq!(Hand::all().len(), 36);
    }

    #[test]
    fn expected_reward_properties() {
        let rules = base_sf();
        let hand = Hand::new(Card::new(4, Suit::Red), Card::new(3, Suit::Red));
        assert_eq!(expected_reward(&rules, &hand, 0), 0.0);
        let ev1 = expected_reward(&rules, &hand, 1);
        let ev2 = expected_reward(&rules, &hand, 2);
        assert!((ev2 - 2.0 * ev1).abs() < 1e-12);
        let losing = GameRules { losers: true, ..rules };
        assert_eq!(expected_reward(&losing, &hand, 2), -ev2);
    }

    #[test]
    fn optimal_policy_structure() {
        for rules in GameRules::all() {
            let opt = optimal_policy_value(&rules);
            assert!(opt >= 0.0, "bet 0 is always available");
            // optimal bet is 2 when EV(1) > 0, else 0 (linearity in bet)
            for h in Hand::all() {
                let ev1 = expected_reward(&rules, &h, 1);
                let best = BETS
                    .iter()
                    .copied()
                    .max_by(|&a, &b| {
                        expected_reward(&rules, &h, a)
                            .partial_cmp(&expected_reward(&rules, &h, b))
                            .unwrap()
                    })
                    .unwrap();
                if ev1 > 1e-12 {
                    assert_eq!(best, 2);
                }
                if ev1 < -1e-12 {
                    assert_eq!(expected_reward(&rules, &h, best), 0.0);
                }
            }
        }
    }

    #[test]
    fn losers_optimum_equals_win_optimum() {
        for game in ALL_GAMES {
            for suits_rule in [false, true] {
                for switch_suit in [false, true] {
                    let win =
                        GameRules { game, losers: false, suits_rule, switch_suit };
                    let lose = GameRules { losers: true, ..win };
                    let a = optimal_policy_value(&win);
                    let b = optimal_policy_value(&lose);
                    assert!((a - b).abs() < 1e-12, "{:?}: {a} vs {b}", win.id());
                }
            }
        }
    }

    #[test]
    fn encoding_shape() {
        let distinct = Hand::new(Card::new(1, Suit::Red), Card::new(3, Suit::Black));
        let v = distinct.encode();
        assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 4);
        // order irrelevant after canonicalization
        let swapped = Hand::new(Card::new(3, Suit::Black), Card::new(1, Suit::Red));
        assert_eq!(v, swapped.encode());
        // duplicate card repeats the same 6-dim pattern in both halves
        let dup = Hand::new(Card::new(2, Suit::Red), Card::new(2, Suit::Red));
        let dv = dup.encode();
        assert_eq!(&dv[0..6], &dv[6..12]);
    }

    #[test]
    fn registry_split() {
        let reg = cards_task_registry();
        assert_eq!(reg.trained.len(), 36);
        assert_eq!(reg.heldout.len(), 4);
        assert!(reg.heldout.iter().all(|r| r.game == GameType::StraightFlush && r.losers));
        let lose = &reg.mappings[0];
        assert_eq!(lose.name, "switch_losers");
        assert!(lose
            .train_pairs
            .iter()
            .all(|(s, t)| s.game != GameType::StraightFlush && t.game != GameType::StraightFlush));
        assert_eq!(lose.train_pairs.len(), 32);
        assert_eq!(lose.eval_pairs.len(), 4);
        assert_eq!(reg.mappings.len(), 3);
        assert_eq!(reg.metaclass.len(), 8);
    }

    #[test]
    fn language_roundtrip() {
        for rules in GameRules::all() {
            let toks = cards_language(&rules);
            assert_eq!(toks.len(), 8);
            let decoded = cards_language_decode(&toks).unwrap();
            assert_eq!(decoded, rules);
        }
        let a = cards_language(&base_sf());
        let b = cards_language(&GameRules { losers: true, ..base_sf() });
        let diffs = a.iter().zip(&b).filter(|(x, y)| x != y).count();
        assert_eq!(diffs, 1);
    }
}
