//! Small bundled datasets used by tests, benches and the command-line demo.

use std::sync::Arc;

use crate::dataset::{Dataset, Provenance, QAExample, Subdomain};

/// Builds an example, locating the answer by its first occurrence.
fn example(
    context_id: &str,
    subdomain: Subdomain,
    context: &Arc<str>,
    id: String,
    question: &str,
    answer: &str,
    provenance: Provenance,
) -> QAExample {
    let byte = context
        .find(answer)
        .unwrap_or_else(|| panic!("fixture answer {answer:?} missing from {context_id}"));
    QAExample {
        id,
        context_id: context_id.to_string(),
        subdomain,
        context: Arc::clone(context),
        question: question.to_string(),
        answer_text: answer.to_string(),
        answer_char_start: context[..byte].chars().count(),
        provenance,
    }
}

type Entry = (Subdomain, &'static str, [(&'static str, &'static str); 2]);

const TOY_QA: [Entry; 10] = [
    (
        Subdomain::Temples,
        "श्री काशी विश्वनाथ मंदिर गोदौलिया में स्थित है। मंदिर सुबह तीन बजे खुलता है। दर्शन के लिए लंबी कतार लगती है।",
        [
            ("काशी विश्वनाथ मंदिर कहाँ स्थित है?", "गोदौलिया में"),
            ("मंदिर कब खुलता है?", "सुबह तीन बजे"),
        ],
    ),
    (
        Subdomain::Kunds,
        "दुर्गा कुंड दुर्गा मंदिर के पास है। कुंड का पानी हरा दिखता है। यहाँ नवरात्रि में मेला लगता है।",
        [
            ("दुर्गा कुंड किसके पास है?", "दुर्गा मंदिर के पास"),
            ("यहाँ कब मेला लगता है?", "नवरात्रि में"),
        ],
    ),
    (
        Subdomain::Ashrams,
        "अन्नपूर्णा आश्रम में यात्रियों को मुफ्त भोजन मिलता है। आश्रम में ठहरने के लिए पहले से पंजीकरण करना होता है।",
        [
            ("अन्नपूर्णा आश्रम में यात्रियों को क्या मिलता है?", "मुफ्त भोजन"),
            ("आश्रम में ठहरने के लिए क्या करना होता है?", "पहले से पंजीकरण"),
        ],
    ),
    (
        Subdomain::Museums,
        "भारत कला भवन संग्रहालय काशी हिंदू विश्वविद्यालय परिसर में है। संग्रहालय सोमवार को बंद रहता है। यहाँ प्राचीन मूर्तियाँ रखी हैं।",
        [
            ("भारत कला भवन कहाँ है?", "काशी हिंदू विश्वविद्यालय परिसर में"),
            ("संग्रहालय किस दिन बंद रहता है?", "सोमवार"),
        ],
    ),
    (
        Subdomain::Travel,
        "गंगा ट्रैवल्स लंका चौराहे पर है। यह एजेंसी सारनाथ के लिए टैक्सी देती है। बुकिंग फोन से होती है।",
        [
            ("गंगा ट्रैवल्स कहाँ है?", "लंका चौराहे पर"),
            ("बुकिंग कैसे होती है?", "फोन से"),
        ],
    ),
    (
        Subdomain::GangaAarti,
        "दशाश्वमेध घाट पर गंगा आरती शाम सात बजे होती है। आरती में सात पुजारी भाग लेते हैं।",
        [
            ("गंगा आरती किस घाट पर होती है?", "दशाश्वमेध घाट"),
            ("आरती में कितने पुजारी भाग लेते हैं?", "सात पुजारी"),
        ],
    ),
    (
        Subdomain::Cruise,
        "अलकनंदा क्रूज अस्सी घाट से चलता है। एक सवारी का किराया सात सौ रुपये है।",
        [
            ("अलकनंदा क्रूज कहाँ से चलता है?", "अस्सी घाट से"),
            ("एक सवारी का किराया कितना है?", "सात सौ रुपये"),
        ],
    ),
    (
        Subdomain::FoodCourt,
        "उडुपी फूड कोर्ट में दक्षिण भारतीय व्यंजन मिलते हैं। यह रात दस बजे तक खुला रहता है।",
        [
            ("उडुपी फूड कोर्ट में कौन से व्यंजन मिलते हैं?", "दक्षिण भारतीय व्यंजन"),
            ("फूड कोर्ट कब तक खुला रहता है?", "रात दस बजे तक"),
        ],
    ),
    (
        Subdomain::PublicToilet,
        "मैदागिन चौराहे पर सार्वजनिक शौचालय है। इसका उपयोग पाँच रुपये में होता है।",
        [
            ("सार्वजनिक शौचालय कहाँ है?", "मैदागिन चौराहे पर"),
            ("शौचालय का शुल्क कितना है?", "पाँच रुपये"),
        ],
    ),
    (
        Subdomain::General,
        "वाराणसी कैंट रेलवे स्टेशन शहर का मुख्य स्टेशन है। हवाई अड्डा बाबतपुर में है।",
        [
            ("शहर का मुख्य स्टेशन कौन सा है?", "वाराणसी कैंट रेलवे स्टेशन"),
            ("हवाई अड्डा कहाँ है?", "बाबतपुर में"),
        ],
    ),
];

/// Twenty question/answer pairs over ten short contexts, two per subdomain.
pub fn toy_qa() -> Dataset {
    let mut examples = Vec::with_capacity(20);
    for (c, (sub, context, pairs)) in TOY_QA.iter().enumerate() {
        let ctx: Arc<str> = Arc::from(*context);
        let cid = format!("c{:02}", c + 1);
        for (q, (question, answer)) in pairs.iter().enumerate() {
            examples.push(example(
                &cid,
                *sub,
                &ctx,
                format!("{cid}-q{}", q + 1),
                question,
                answer,
                Provenance::Manual,
            ));
        }
    }
    Dataset { examples }
}

const EXTRA_SENTENCES: [&str; 26] = [
    "वाराणसी गंगा नदी के किनारे बसा एक प्राचीन शहर है।",
    "हर साल लाखों यात्री काशी आते हैं।",
    "घाटों पर सुबह का दृश्य बहुत सुंदर होता है।",
    "अस्सी घाट पर सुबह ए बनारस कार्यक्रम होता है।",
    "मणिकर्णिका घाट शहर का सबसे पुराना घाट माना जाता है।",
    "सारनाथ में भगवान बुद्ध ने पहला उपदेश दिया था।",
    "संकट मोचन मंदिर हनुमान जी को समर्पित है।",
    "मंदिर में मंगलवार को बहुत भीड़ होती है।",
    "बनारसी साड़ी पूरे देश में प्रसिद्ध है।",
    "गोदौलिया बाजार में कई दुकानें हैं।",
    "नाव की सवारी से सभी घाट देखे जा सकते हैं।",
    "शाम को घाट पर दीप जलाए जाते हैं।",
    "कचौड़ी और जलेबी यहाँ का प्रसिद्ध नाश्ता है।",
    "बनारसी पान का स्वाद अनोखा होता है।",
    "रामनगर किला गंगा के दूसरे किनारे पर है।",
    "किले में एक छोटा संग्रहालय भी है।",
    "देव दीपावली पर पूरा शहर रोशनी से सजता है।",
    "तुलसी घाट पर गोस्वामी तुलसीदास रहते थे।",
    "विश्वविद्यालय परिसर में नया विश्वनाथ मंदिर है।",
    "यात्री ऑटो रिक्शा से शहर घूम सकते हैं।",
    "पुरानी गलियाँ बहुत संकरी हैं।",
    "दुर्गा मंदिर लाल रंग का है।",
    "कुंड के चारों ओर सीढ़ियाँ बनी हैं।",
    "आश्रम में रोज सत्संग होता है।",
    "स्टेशन से घाट तक टैक्सी मिलती है।",
    "गर्मी में यहाँ बहुत धूप होती है।",
];

/// Fifty short sentences: every sentence of the QA contexts plus general
/// text about the city.
pub fn toy_corpus() -> Vec<String> {
    let mut out: Vec<String> = TOY_QA
        .iter()
        .flat_map(|(_, ctx, _)| ctx.split_inclusive('।').map(|s| s.trim().to_string()))
        .filter(|s| !s.is_empty())
        .collect();
    out.extend(EXTRA_SENTENCES.iter().map(|s| s.to_string()));
    out.truncate(50);
    out
}

/// Four questions on one context: a manual question, a generated
/// paraphrase, and two near-rewrites of that paraphrase.
pub fn repeated_pairs() -> Dataset {
    let ctx: Arc<str> = Arc::from(
        "हाँ, दुर्गा मंदिर में तीन बार आरती होती है। दुर्गा मंदिर में तीन बार आरती आयोजित होती है। \
         दुर्गा मंदिर में तीन बार आरती का आयोजन होता है।",
    );
    let items = [
        ("क्या दुर्गा मंदिर में तीन बार आरती होती है?", "हाँ, दुर्गा मंदिर में तीन बार आरती होती है", Provenance::Manual),
        ("दुर्गा मंदिर में कितनी बार आरती होती है?", "दुर्गा मंदिर में तीन बार आरती होती है", Provenance::Generated),
        (
            "दुर्गा मंदिर में कितनी बार आरती आयोजित होती है?",
            "दुर्गा मंदिर में तीन बार आरती आयोजित होती है",
            Provenance::Generated,
        ),
        (
            "दुर्गा मंदिर में कितनी बार आरती का आयोजन होता है?",
            "दुर्गा मंदिर में तीन बार आरती का आयोजन होता है",
            Provenance::Generated,
        ),
    ];
    let examples = items
        .iter()
        .enumerate()
        .map(|(i, (q, a, p))| example("durga", Subdomain::Temples, &ctx, format!("durga-{}", i + 1), q, a, *p))
        .collect();
    Dataset { examples }
}

/// Manual and generated pair counts per subdomain.
pub const SUBDOMAIN_COUNTS: [(Subdomain, usize, usize); 10] = [
    (Subdomain::Temples, 2686, 11691),
    (Subdomain::Kunds, 470, 2398),
    (Subdomain::Ashrams, 1555, 5284),
    (Subdomain::Museums, 484, 1039),
    (Subdomain::Travel, 2413, 6828),
    (Subdomain::GangaAarti, 15, 46),
    (Subdomain::Cruise, 19, 60),
    (Subdomain::FoodCourt, 11, 15),
    (Subdomain::PublicToilet, 9, 13),
    (Subdomain::General, 53, 81),
];

/// A placeholder dataset whose per-subdomain counts follow
/// [`SUBDOMAIN_COUNTS`]; every question is distinct, contexts are shared.
pub fn count_manifest() -> Dataset {
    let mut examples = Vec::new();
    for (sub, manual, generated) in SUBDOMAIN_COUNTS {
        let ctx: Arc<str> = Arc::from(format!("{} से जुड़ी जानकारी", sub.as_str()).as_str());
        let cid = format!("{}-ctx", sub.as_str());
        for (prov, n, tag) in [(Provenance::Manual, manual, "m"), (Provenance::Generated, generated, "g")] {
            for i in 0..n {
                examples.push(example(
                    &cid,
                    sub,
                    &ctx,
                    format!("{}-{tag}{i}", sub.as_str()),
                    &format!("प्रश्न {i}"),
                    "जानकारी",
                    prov,
                ));
            }
        }
    }
    Dataset { examples }
}

/// Two 100-item binary label vectors with balanced marginals on the first
/// rater and 95 agreements, so κ = (0.95 − 0.5) / 0.5 = 0.9.
pub fn agreement_vectors() -> (Vec<u8>, Vec<u8>) {
    let a: Vec<u8> = (0..100).map(|i| u8::from(i < 50)).collect();
    let mut b = a.clone();
    // Three accepts flipped to reject, two rejects flipped to accept.
    for i in [0, 1, 2, 50, 51] {
        b[i] ^= 1;
    }
    (a, b)
}
