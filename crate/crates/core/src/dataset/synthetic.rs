//! Seeded long-tail catalog generator.
//!
//! Popularity is log-normal with planted effects:
//! * series share a latent quality, so prior episodes' views predict the
//!   next episode (the related-view signal for type A);
//! * standalone titles and series premieres get their popularity from
//!   channel/genre/etc. effects plus cast "star power" and trending keywords
//!   (text signal for type B);
//! * daily views decay exponentially after release with multiplicative noise.
//!
//! The last [`TAIL_DAYS`] days of the timeline carry no releases, so every
//! content has a complete ten-day observation window.

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{Catalog, ContentRecord, DataError, ViewLog};

/// Day 0 of every generated timeline.
pub const SYNTHETIC_EPOCH: NaiveDate = match NaiveDate::from_ymd_opt(2017, 1, 1) {
    Some(d) => d,
    None => panic!("valid date"),
};

const TAIL_DAYS: u32 = 10;
const MIN_CONTENTS: usize = 10;
const MIN_DAYS: u32 = 30;

const PROGRAM_TYPES: [&str; 6] = [
    "animation",
    "documentary",
    "drama",
    "entertainment",
    "kids",
    "movie",
];
const SERIES_TYPES: [&str; 5] = ["animation", "documentary", "drama", "entertainment", "kids"];
const GENRES: [&str; 14] = [
    "action", "comedy", "crime", "family", "fantasy", "history", "horror", "medical", "music",
    "mystery", "romance", "scifi", "sports", "thriller",
];
const AGE_LIMITS: [&str; 4] = ["12", "15", "19", "all"];
const PAYMENTS: [&str; 2] = ["free", "pay"];
const N_CHANNELS: usize = 40;
const N_ACTORS: usize = 420;

const SURNAMES: [&str; 16] = [
    "kim", "lee", "park", "choi", "jung", "kang", "cho", "yoon", "jang", "lim", "han", "oh", "seo",
    "shin", "kwon", "song",
];
const SYLLABLES: [&str; 24] = [
    "min", "jun", "seo", "yeon", "ha", "eun", "ji", "woo", "hye", "soo", "kyung", "tae", "hyun",
    "bin", "na", "ra", "do", "yoon", "chan", "young", "sung", "hee", "jae", "won",
];
const KEYWORDS: [&str; 60] = [
    "love", "revenge", "office", "school", "hospital", "court", "police", "chaebol", "family",
    "friendship", "first-love", "time-travel", "zombie", "ghost", "detective", "idol", "cooking",
    "travel", "survival", "war", "joseon", "palace", "spy", "heist", "sports", "baseball",
    "soccer", "music", "band", "dance", "wedding", "divorce", "secret", "amnesia", "twins",
    "rookie", "lawyer", "doctor", "chef", "webtoon", "remake", "sequel", "award", "festival",
    "variety", "reality", "audition", "comeback", "healing", "thriller", "mystery", "romcom",
    "noir", "fantasy", "superpower", "alien", "robot", "island", "village", "seoul",
];
const TITLE_WORDS: [&str; 40] = [
    "spring", "night", "moon", "sun", "star", "river", "city", "road", "home", "blue", "red",
    "golden", "last", "first", "secret", "hidden", "lost", "young", "old", "wild", "silent",
    "dream", "heart", "hand", "door", "garden", "winter", "summer", "rain", "snow", "sky", "sea",
    "fire", "light", "shadow", "story", "song", "letter", "window", "bridge",
];

struct Levels {
    effect: Vec<f64>,
}

impl Levels {
    fn new(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Self {
        let normal = Normal::new(0.0, scale).expect("finite scale");
        Levels {
            effect: (0..n).map(|_| normal.sample(rng)).collect(),
        }
    }
}

struct Actor {
    name: String,
    effect: f64,
    debut_day: u32,
}

struct World {
    payment: Levels,
    program_type: Levels,
    genre: Levels,
    age: Levels,
    channel: Levels,
    actors: Vec<Actor>,
    keyword_effect: Vec<f64>,
}

impl World {
    fn new(rng: &mut ChaCha8Rng, days: u32) -> Self {
        let payment = Levels::new(rng, PAYMENTS.len(), 0.25);
        let program_type = Levels::new(rng, PROGRAM_TYPES.len(), 0.3);
        let genre = Levels::new(rng, GENRES.len(), 0.4);
        let age = Levels::new(rng, AGE_LIMITS.len(), 0.2);
        let channel = Levels::new(rng, N_CHANNELS, 0.6);

        let mut actors = Vec::with_capacity(N_ACTORS);
        let mut used = std::collections::HashSet::new();
        let minor = Normal::new(0.0, 0.1).expect("finite");
        for i in 0..N_ACTORS {
            let mut name = format!(
                "{}{}{}",
                SURNAMES.choose(rng).expect("non-empty"),
                SYLLABLES.choose(rng).expect("non-empty"),
                SYLLABLES.choose(rng).expect("non-empty"),
            );
            if !used.insert(name.clone()) {
                name = format!("{name}{i}");
                used.insert(name.clone());
            }
            let effect = if rng.random::<f64>() < 0.09 {
                rng.random_range(0.8..1.6)
            } else {
                minor.sample(rng)
            };
            // 30% of the cast pool debuts during the timeline
            let debut_day = if rng.random::<f64>() < 0.7 {
                0
            } else {
                rng.random_range(0..days)
            };
            actors.push(Actor {
                name,
                effect,
                debut_day,
            });
        }
        let keyword_effect = (0..KEYWORDS.len())
            .map(|_| {
                if rng.random::<f64>() < 0.12 {
                    rng.random_range(0.5..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        World {
            payment,
            program_type,
            genre,
            age,
            channel,
            actors,
            keyword_effect,
        }
    }

    fn cast(&self, rng: &mut ChaCha8Rng, day: u32, n: usize) -> Vec<usize> {
        let available: Vec<usize> = (0..self.actors.len())
            .filter(|&i| self.actors[i].debut_day <= day)
            .collect();
        let mut picked: Vec<usize> = available.choose_multiple(rng, n).copied().collect();
        picked.sort_unstable();
        picked
    }

    fn keywords(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
        let mut picked: Vec<usize> = (0..KEYWORDS.len()).collect::<Vec<_>>()
            .choose_multiple(rng, n)
            .copied()
            .collect();
        picked.sort_unstable();
        picked
    }

    fn text_effect(&self, actors: &[usize], keywords: &[usize]) -> f64 {
        actors.iter().map(|&a| self.actors[a].effect).sum::<f64>()
            + keywords.iter().map(|&k| self.keyword_effect[k]).sum::<f64>()
    }
}

/// Static attributes shared by a series or owned by a standalone title.
#[derive(Clone)]
struct Profile {
    payment: usize,
    program_type: usize,
    genre: usize,
    age: usize,
    channel: usize,
    actors: Vec<usize>,
    keywords: Vec<usize>,
    title: String,
    playtime: u32,
}

impl Profile {
    fn draw(rng: &mut ChaCha8Rng, world: &World, day: u32, series: bool) -> Self {
        let program_type = if series {
            let name = SERIES_TYPES.choose(rng).expect("non-empty");
            PROGRAM_TYPES.iter().position(|p| p == name).expect("listed")
        } else if rng.random::<f64>() < 0.55 {
            PROGRAM_TYPES.iter().position(|p| *p == "movie").expect("listed")
        } else {
            rng.random_range(0..PROGRAM_TYPES.len())
        };
        let playtime = match PROGRAM_TYPES[program_type] {
            "movie" => rng.random_range(5400..8400),
            "drama" => rng.random_range(3600..4500),
            "animation" | "kids" => rng.random_range(900..1800),
            _ => rng.random_range(2400..5400),
        };
        let n_words = rng.random_range(1..=3);
        let title = (0..n_words)
            .map(|_| *TITLE_WORDS.choose(rng).expect("non-empty"))
            .collect::<Vec<_>>()
            .join(" ");
        let n_actors = rng.random_range(2..=4);
        let n_keywords = rng.random_range(2..=4);
        Profile {
            payment: usize::from(rng.random::<f64>() < 0.4),
            program_type,
            genre: rng.random_range(0..GENRES.len()),
            age: rng.random_range(0..AGE_LIMITS.len()),
            channel: rng.random_range(0..N_CHANNELS),
            actors: world.cast(rng, day, n_actors),
            keywords: world.keywords(rng, n_keywords),
            title,
            playtime,
        }
    }

    fn log_effect(&self, world: &World) -> f64 {
        world.payment.effect[self.payment]
            + world.program_type.effect[self.program_type]
            + world.genre.effect[self.genre]
            + world.age.effect[self.age]
            + world.channel.effect[self.channel]
            + world.text_effect(&self.actors, &self.keywords)
    }
}

struct Draft {
    day: u32,
    tiebreak: u64,
    series: Option<usize>,
    episode: u32,
    profile: Profile,
    log_scale: f64,
    decay_days: f64,
}

fn calendar_effect(date: NaiveDate) -> f64 {
    let weekday = match date.weekday() {
        Weekday::Fri | Weekday::Sat => 0.2,
        Weekday::Sun => 0.1,
        _ => 0.0,
    };
    let month = 0.15 * (f64::from(date.month0()) * std::f64::consts::PI / 6.0).cos();
    weekday + month
}

/// Splits `total` into `parts` integer shares proportional to `weights`
/// (largest remainder), each share capped at `cap`.
fn apportion(weights: &[f64], total: usize, cap: usize) -> Vec<usize> {
    let parts = weights.len();
    let mut shares = vec![0usize; parts];
    let mut remaining = total;
    let mut open: Vec<usize> = (0..parts).collect();
    while remaining > 0 && !open.is_empty() {
        let wsum: f64 = open.iter().map(|&i| weights[i]).sum();
        let mut rema: Vec<(f64, usize)> = Vec::with_capacity(open.len());
        let mut given = 0usize;
        for &i in &open {
            let exact = remaining as f64 * weights[i] / wsum;
            let whole = exact.floor() as usize;
            let room = cap - shares[i];
            let take = whole.min(room);
            shares[i] += take;
            given += take;
            rema.push((exact - whole as f64, i));
        }
        let mut left = remaining - given;
        rema.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for &(_, i) in &rema {
            if left == 0 {
                break;
            }
            if shares[i] < cap {
                shares[i] += 1;
                left -= 1;
            }
        }
        remaining = left;
        open.retain(|&i| shares[i] < cap);
    }
    shares
}

/// Generates `n_contents` contents and their daily view logs over `days`
/// days starting at [`SYNTHETIC_EPOCH`]. Output is a pure function of the
/// arguments.
pub fn generate_synthetic(
    n_contents: usize,
    days: u32,
    seed: u64,
    type_a_fraction: f64,
) -> Result<(Vec<ContentRecord>, Vec<ViewLog>), DataError> {
    if n_contents < MIN_CONTENTS {
        return Err(DataError::InvalidGenerator(format!(
            "n_contents must be at least {MIN_CONTENTS}, got {n_contents}"
        )));
    }
    if days < MIN_DAYS {
        return Err(DataError::InvalidGenerator(format!(
            "days must be at least {MIN_DAYS}, got {days}"
        )));
    }
    if !(0.0..1.0).contains(&type_a_fraction) {
        return Err(DataError::InvalidGenerator(format!(
            "type_a_fraction must lie in [0, 1), got {type_a_fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let world = World::new(&mut rng, days);

    // last release day, inclusive
    let span = days - TAIL_DAYS - 1;
    let n_a = ((type_a_fraction * n_contents as f64).round() as usize).min(n_contents - 1);
    let n_b = n_contents - n_a;
    let n_series = if n_a == 0 {
        0
    } else {
        ((n_b as f64 * 0.35).round() as usize).clamp(1, n_b)
    };
    let n_standalone = n_b - n_series;

    let max_extra = span as usize; // at most one release per day per series
    if n_series * max_extra < n_a {
        return Err(DataError::InvalidGenerator(format!(
            "{n_a} continuation episodes do not fit {n_series} series over {days} days"
        )));
    }
    let exp = Exp::new(1.0).expect("positive rate");
    let weights: Vec<f64> = (0..n_series).map(|_| exp.sample(&mut rng) + 0.3).collect();
    let extra = apportion(&weights, n_a, max_extra);

    let quality_noise = Normal::new(0.0, 1.0).expect("finite");
    let episode_noise = Normal::new(0.0, 0.3).expect("finite");
    let drift = Normal::new(0.0, 0.15).expect("finite");
    let standalone_noise = Normal::new(0.0, 0.6).expect("finite");
    let base_a = 500f64.ln() + 0.5;
    let base_b = 500f64.ln();

    let mut drafts: Vec<Draft> = Vec::with_capacity(n_contents);
    for (s, &extra_eps) in extra.iter().enumerate() {
        let k = extra_eps as u32 + 1;
        let mut spacing: u32 = match rng.random::<f64>() {
            x if x < 0.6 => 7,
            x if x < 0.8 => rng.random_range(2..=3),
            _ => 1,
        };
        if k > 1 && (k - 1) * spacing > span {
            spacing = (span / (k - 1)).max(1);
        }
        let length = (k - 1) * spacing;
        let start = rng.random_range(0..=span - length);
        let profile = Profile::draw(&mut rng, &world, start, true);
        let quality = base_a + profile.log_effect(&world) + quality_noise.sample(&mut rng);
        let decay_days = rng.random_range(4.0..8.0);
        let mut walk = 0.0;
        for e in 0..k {
            let day = start + e * spacing;
            walk += drift.sample(&mut rng);
            let mut ep = profile.clone();
            ep.title = format!("{} {}", profile.title, e + 1);
            let date = SYNTHETIC_EPOCH + Duration::days(i64::from(day));
            let log_scale =
                quality + walk + calendar_effect(date) + episode_noise.sample(&mut rng);
            drafts.push(Draft {
                day,
                tiebreak: rng.random(),
                series: Some(s),
                episode: e,
                profile: ep,
                log_scale,
                decay_days,
            });
        }
    }
    for j in 0..n_standalone {
        // stratified release days so every stretch of the timeline gets titles
        let lo = (j as f64 * f64::from(span + 1) / n_standalone as f64).floor() as u32;
        let hi = (((j + 1) as f64 * f64::from(span + 1) / n_standalone as f64).ceil() as u32)
            .clamp(lo + 1, span + 1);
        let day = rng.random_range(lo..hi);
        let profile = Profile::draw(&mut rng, &world, day, false);
        let date = SYNTHETIC_EPOCH + Duration::days(i64::from(day));
        let log_scale = base_b
            + profile.log_effect(&world)
            + calendar_effect(date)
            + standalone_noise.sample(&mut rng);
        drafts.push(Draft {
            day,
            tiebreak: rng.random(),
            series: None,
            episode: 0,
            profile,
            log_scale,
            decay_days: rng.random_range(3.0..7.0),
        });
    }
    drafts.sort_by_key(|d| (d.day, d.tiebreak));

    // series ids follow premiere order
    let mut series_ids: Vec<Option<usize>> = vec![None; n_series];
    let mut next_series = 0usize;
    let daily_noise = Normal::new(-0.35f64 * 0.35 / 2.0, 0.35).expect("finite");
    let mut contents = Vec::with_capacity(n_contents);
    let mut logs = Vec::new();
    for (idx, draft) in drafts.iter().enumerate() {
        let content_id = format!("c{idx:06}");
        let series_id = draft.series.map(|s| {
            let sid = *series_ids[s].get_or_insert_with(|| {
                next_series += 1;
                next_series
            });
            format!("s{sid:05}")
        });
        let p = &draft.profile;
        let release_date = SYNTHETIC_EPOCH + Duration::days(i64::from(draft.day));
        contents.push(ContentRecord {
            content_id: content_id.clone(),
            series_id,
            payment: PAYMENTS[p.payment].to_string(),
            program_type: PROGRAM_TYPES[p.program_type].to_string(),
            genre: GENRES[p.genre].to_string(),
            playtime: p.playtime,
            episode_count: draft.episode,
            age_limit: AGE_LIMITS[p.age].to_string(),
            channel: format!("ch{:02}", p.channel + 1),
            actors: p.actors.iter().map(|&a| world.actors[a].name.clone()).collect(),
            title: p.title.clone(),
            keywords: p.keywords.iter().map(|&k| KEYWORDS[k].to_string()).collect(),
            release_date,
            related_view: None,
        });

        let scale = draft.log_scale.exp();
        let rho = (-1.0 / draft.decay_days).exp();
        let mut share = 1.0 - rho;
        for day in draft.day..days {
            let mean = scale * share;
            share *= rho;
            let count = (mean * daily_noise.sample(&mut rng).exp()).round() as u64;
            let count = if day == draft.day { count.max(1) } else { count };
            if count > 0 {
                logs.push(ViewLog {
                    content_id: content_id.clone(),
                    date: SYNTHETIC_EPOCH + Duration::days(i64::from(day)),
                    view_count: count,
                });
            }
        }
    }

    // related_view metadata: prior-series views over the ten days before release
    let catalog = Catalog::new(contents.clone(), &logs)?;
    for c in &mut contents {
        if c.series_id.is_some() && catalog.prior_works(c, c.release_date).next().is_some() {
            c.related_view = Some(catalog.related_views(c, c.release_date, TAIL_DAYS));
        }
    }
    Ok((contents, logs))
}
