//! Seeded synthetic tweet corpus.
//!
//! Tweets come from five well-separated cities. Each city has its own
//! vocabulary, and labels are scattered around the city center with
//! Gaussian noise. Texts mix city words with a shared filler vocabulary.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::features::TweetRecord;
use crate::geo::GeoPoint;

#[derive(Debug, Clone, Copy)]
pub struct City {
    pub name: &'static str,
    pub country: &'static str,
    pub lon: f64,
    pub lat: f64,
    pub vocab: &'static [&'static str],
}

impl City {
    pub fn center(&self) -> GeoPoint {
        GeoPoint::raw(self.lon, self.lat)
    }
}

pub const CITIES: [City; 5] = [
    City {
        name: "London",
        country: "United Kingdom",
        lon: -0.1276,
        lat: 51.5072,
        vocab: &[
            "london", "thames", "tube", "pub", "quid", "bloody", "brilliant", "camden", "underground", "westminster",
            "cheers", "chelsea", "arsenal", "tottenham", "hackney", "brixton", "innit", "knackered", "piccadilly",
            "shoreditch", "oyster", "bakerloo", "islington", "greenwich",
        ],
    },
    City {
        name: "New York",
        country: "United States",
        lon: -74.0060,
        lat: 40.7128,
        vocab: &[
            "nyc", "brooklyn", "manhattan", "subway", "bodega", "yankees", "knicks", "queens", "bronx", "harlem",
            "broadway", "deli", "bagel", "hudson", "mets", "jersey", "williamsburg", "tribeca", "mta", "cabbie",
            "stoop", "astoria", "flatbush", "midtown",
        ],
    },
    City {
        name: "Tokyo",
        country: "Japan",
        lon: 139.6917,
        lat: 35.6895,
        vocab: &[
            "tokyo", "shibuya", "shinjuku", "ramen", "sushi", "akihabara", "yamanote", "harajuku", "ginza", "kawaii",
            "sake", "izakaya", "asakusa", "roppongi", "ueno", "onigiri", "konbini", "ikebukuro", "odaiba", "sumida",
            "tsukiji", "nakano", "meguro", "kichijoji",
        ],
    },
    City {
        name: "Sydney",
        country: "Australia",
        lon: 151.2093,
        lat: -33.8688,
        vocab: &[
            "sydney", "bondi", "arvo", "barbie", "harbour", "manly", "footy", "thongs", "servo", "brekkie", "ozzie",
            "parramatta", "coogee", "surry", "newtown", "aussie", "ripper", "bogan", "maccas", "straya", "chullora",
            "cronulla", "randwick", "woolloomooloo",
        ],
    },
    City {
        name: "Sao Paulo",
        country: "Brazil",
        lon: -46.6333,
        lat: -23.5505,
        vocab: &[
            "sampa", "paulista", "avenida", "feijoada", "corinthians", "palmeiras", "pinheiros", "ibirapuera", "vila",
            "moema", "tiete", "caipirinha", "obrigado", "saudade", "paulistano", "pastel", "coxinha", "metro",
            "liberdade", "santos", "brigadeiro", "mooca", "perdizes", "lapa",
        ],
    },
];

const FILLER: &[&str] = &[
    "the", "a", "is", "today", "love", "lol", "just", "great", "day", "night", "coffee", "work", "happy", "so", "my",
    "time", "fresh", "good", "going", "home", "weekend", "friends", "music", "food",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub seed: u64,
    /// Label scatter per coordinate, degrees.
    pub noise_deg: f64,
    /// Tokens per tweet text.
    pub text_tokens: usize,
    /// Share of text tokens drawn from the city vocabulary.
    pub city_token_share: f64,
    pub users_per_city: usize,
    /// Probability that a tweet carries place metadata.
    pub place_probability: f64,
    /// How many words of each city vocabulary are used.
    pub vocab_size: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            samples: 20_000,
            seed: 7,
            noise_deg: 0.3,
            text_tokens: 20,
            city_token_share: 0.9,
            users_per_city: 200,
            place_probability: 1.0,
            vocab_size: 24,
        }
    }
}

/// Index of the city each record was drawn from, in record order, with
/// the records themselves.
pub fn generate_with_cities(cfg: &SyntheticConfig) -> Result<(Vec<TweetRecord>, Vec<usize>)> {
    if cfg.samples == 0 || cfg.users_per_city == 0 || cfg.text_tokens == 0 {
        return invalid("synthetic corpus needs samples, users and tokens");
    }
    if cfg.vocab_size == 0 {
        return invalid("vocab_size must be positive");
    }
    if !(0.0..=1.0).contains(&cfg.city_token_share) || !(0.0..=1.0).contains(&cfg.place_probability) {
        return invalid("shares and probabilities must lie in [0, 1]");
    }
    let noise = Normal::new(0.0, cfg.noise_deg).map_err(|e| crate::GeoError::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.samples);
    let mut cities = Vec::with_capacity(cfg.samples);
    let base_ts: i64 = 1_600_000_000;

    for n in 0..cfg.samples {
        let c = rng.random_range(0..CITIES.len());
        let city = &CITIES[c];
        let vocab = &city.vocab[..cfg.vocab_size.min(city.vocab.len())];
        let user = rng.random_range(0..cfg.users_per_city);
        let user_id = format!("u{c}_{user}");

        let text: Vec<&str> = (0..cfg.text_tokens)
            .map(|_| {
                let pool = if rng.random_bool(cfg.city_token_share) { vocab } else { FILLER };
                *pool.choose(&mut rng).expect("vocabularies are non-empty")
            })
            .collect();
        let description: Vec<&str> = (0..3).map(|_| *vocab.choose(&mut rng).expect("non-empty")).collect();
        let handle = vocab.choose(&mut rng).expect("non-empty");
        let lon = (city.lon + noise.sample(&mut rng)).clamp(-180.0, 180.0);
        let lat = (city.lat + noise.sample(&mut rng)).clamp(-90.0, 90.0);
        let with_place = rng.random_bool(cfg.place_probability);

        records.push(TweetRecord {
            tweet_id: format!("t{n}"),
            user_id: user_id.clone(),
            timestamp: Some(base_ts + n as i64 * 600),
            text: text.join(" "),
            user_location: rng.random_bool(0.7).then(|| city.name.to_string()),
            user_description: Some(description.join(" ")),
            user_name: Some(format!("{} {}", capitalize(handle), capitalize(FILLER[user % FILLER.len()]))),
            user_screen_name: Some(format!("{handle}{user}")),
            place_country: with_place.then(|| city.country.to_string()),
            place_type: with_place.then(|| "city".to_string()),
            place_location: None,
            place_name: with_place.then(|| city.name.to_string()),
            place_full_name: with_place.then(|| format!("{}, {}", city.name, city.country)),
            label: Some(GeoPoint::new(lon, lat)?),
        });
        cities.push(c);
    }
    Ok((records, cities))
}

fn capitalize(word: &str) -> String {
    let mut chars = word.chars();
    chars.next().map(|c| c.to_uppercase().chain(chars).collect()).unwrap_or_default()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<Vec<TweetRecord>> {
    Ok(generate_with_cities(cfg)?.0)
}
